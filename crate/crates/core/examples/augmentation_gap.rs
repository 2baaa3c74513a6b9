//! Runs the augmentation-gap experiment and prints per-seed results.
//!
//! `cargo run --release -p conceptcode --example augmentation_gap -- [variants...]`
//!
//! Set `GAP_CONFIG` to a JSON file holding a full experiment configuration to
//! override the built-in one.

use conceptcode::experiment::{augmentation_gap, GapExperiment};

fn main() -> conceptcode::Result<()> {
    env_logger::init();
    let exp = match std::env::var("GAP_CONFIG") {
        Ok(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        Err(_) => GapExperiment::desk_scale(),
    };
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let variants = if args.is_empty() { vec![5, 1] } else { args };
    for v in variants {
        let start = std::time::Instant::now();
        let report = augmentation_gap(&exp, v)?;
        for r in &report.runs {
            println!(
                "variants {v} seed {}: baseline {:.4} ({} ep) augmented {:.4} ({} ep) gap {:+.2} pts",
                r.seed,
                r.baseline_micro_f1,
                r.baseline_epochs,
                r.augmented_micro_f1,
                r.augmented_epochs,
                100.0 * r.gap()
            );
        }
        println!("variants {v}: median gap {:+.2} pts in {:.1}s", 100.0 * report.median_gap, start.elapsed().as_secs_f64());
    }
    Ok(())
}
