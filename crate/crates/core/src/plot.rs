//! Static SVG figures: F1 by label-frequency bucket and the
//! phrases-per-concept histogram.
//!
//! Nothing is written unless the whole figure renders.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::eval::{Bucket, BucketedF1};
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860"];

/// Grouped bar chart of F1 per frequency bucket, one bar series per model.
/// Buckets that no series populates are left out.
pub fn render_bucket_chart(series: &[(String, BucketedF1)], config_hash: &str) -> Result<String> {
    let buckets: Vec<Bucket> = Bucket::ALL
        .into_iter()
        .filter(|&b| series.iter().any(|(_, f)| f.get(b).is_some()))
        .collect();
    if series.is_empty() || buckets.is_empty() {
        return Err(Error::EmptyPlot("no bucketed F1 values".into()));
    }
    let mut svg = header("F1 by training-set label frequency", config_hash);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    y_axis(&mut svg, 1.0, plot_h, |v| format!("{v:.1}"));
    let group_w = plot_w / buckets.len() as f64;
    let bar_w = group_w * 0.8 / series.len() as f64;
    for (g, &bucket) in buckets.iter().enumerate() {
        let gx = LEFT + g as f64 * group_w + group_w * 0.1;
        for (s, (_, f1)) in series.iter().enumerate() {
            if let Some(v) = f1.get(bucket) {
                let h = v.clamp(0.0, 1.0) * plot_h;
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{:.4}</title></rect>"#,
                    gx + s as f64 * bar_w,
                    TOP + plot_h - h,
                    bar_w,
                    h,
                    PALETTE[s % PALETTE.len()],
                    v
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#,
            LEFT + (g as f64 + 0.5) * group_w,
            TOP + plot_h + 18.0,
            bucket.name()
        );
    }
    for (s, (name, _)) in series.iter().enumerate() {
        let y = TOP + 12.0 + 16.0 * s as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            WIDTH - RIGHT - 150.0,
            y - 9.0,
            PALETTE[s % PALETTE.len()],
            WIDTH - RIGHT - 135.0,
            y,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Histogram of how many phrases map to each concept.
pub fn render_histogram(phrases_per_concept: &[usize], config_hash: &str) -> Result<String> {
    if phrases_per_concept.is_empty() {
        return Err(Error::EmptyPlot("no phrase counts".into()));
    }
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in phrases_per_concept {
        *freq.entry(c).or_default() += 1;
    }
    let lo = *freq.keys().next().unwrap();
    let hi = *freq.keys().next_back().unwrap();
    let max_count = *freq.values().max().unwrap() as f64;
    let mut svg = header("Phrases per concept", config_hash);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    y_axis(&mut svg, max_count, plot_h, |v| format!("{v:.0}"));
    let bins = hi - lo + 1;
    let bin_w = plot_w / bins as f64;
    for (i, value) in (lo..=hi).enumerate() {
        let count = freq.get(&value).copied().unwrap_or(0);
        let h = count as f64 / max_count * plot_h;
        let x = LEFT + i as f64 * bin_w;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="white"><title>{count}</title></rect>"#,
            x,
            TOP + plot_h - h,
            bin_w,
            h,
            PALETTE[0]
        );
        if bins <= 30 || i % bins.div_ceil(30) == 0 {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{value}</text>"#,
                x + bin_w / 2.0,
                TOP + plot_h + 16.0
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">phrases mapped to the concept</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_bucket_chart(path: &Path, series: &[(String, BucketedF1)], config_hash: &str) -> Result<()> {
    let svg = render_bucket_chart(series, config_hash)?;
    std::fs::write(path, svg)?;
    Ok(())
}

pub fn write_histogram(path: &Path, phrases_per_concept: &[usize], config_hash: &str) -> Result<()> {
    let svg = render_histogram(phrases_per_concept, config_hash)?;
    std::fs::write(path, svg)?;
    Ok(())
}

fn header(title: &str, config_hash: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<metadata>config_hash={}</metadata>"#, escape(config_hash));
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    svg
}

fn y_axis(svg: &mut String, max: f64, plot_h: f64, fmt: impl Fn(f64) -> String) {
    let base = TOP + plot_h;
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/><line x1="{LEFT}" y1="{base}" x2="{:.2}" y2="{base}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    for t in 0..=5 {
        let v = max * t as f64 / 5.0;
        let y = base - plot_h * t as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0,
            fmt(v)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
