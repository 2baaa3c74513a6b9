use conceptcode::annotator::Annotation;
use conceptcode::corpus::Document;
use conceptcode::model::{EncodedDoc, Model, ModelConfig, TokenPolicy};
use conceptcode::multitask::AuxConfig;
use conceptcode::ontology::{LabelSpace, Ontology};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn ontology() -> Ontology {
    let e = |c: &str, p: Option<&str>| (c.to_string(), p.map(str::to_string));
    Ontology::from_edges(vec![
        e("R1", None),
        e("G1", Some("R1")),
        e("G2", Some("R1")),
        e("C1", Some("G1")),
        e("C2", Some("G1")),
        e("C3", Some("G2")),
    ])
    .unwrap()
}

pub fn documents() -> Vec<Document> {
    let mut a = Document::new("a", "pa", toks("patient reports chest pain and shortness of breath today")).with_labels(["L1", "L3"]);
    a.annotations = Some(vec![
        Annotation::new(2, 4, "C1"),
        Annotation::new(3, 4, "C2"),
        Annotation::new(5, 8, "C3"),
        Annotation::new(6, 7, "G2"),
    ]);
    let mut b = Document::new("b", "pb", toks("chest pain resolved shortness of breath persists")).with_labels(["L2"]);
    b.annotations = Some(vec![Annotation::new(0, 2, "C1"), Annotation::new(0, 2, "C2"), Annotation::new(3, 6, "C3")]);
    vec![a, b]
}

pub fn model(policy: TokenPolicy, aux: Option<AuxConfig>) -> (Model, Vec<EncodedDoc>) {
    let docs = documents();
    let config = ModelConfig {
        policy,
        overlap_attention: true,
        gram: true,
        embed_dim: 5,
        conv_dim: 4,
        kernel_width: 3,
        attention_hidden: 6,
        dropout: 0.0,
        seed: 11,
        min_pair_count: 1,
        ..Default::default()
    };
    let labels = LabelSpace::new(["L1", "L2", "L3"]).unwrap();
    let mut m = Model::from_training(config, aux, &docs, labels, Some(&ontology()), 1).unwrap();
    // move gates off 0.5 so every slot carries a distinct gradient
    for (i, g) in m.params.gate_logits.iter_mut().enumerate() {
        *g = 0.3 * i as f64 - 0.4;
    }
    let enc = docs.iter().map(|d| m.encode_for_training(d).unwrap()).collect();
    (m, enc)
}

/// Worst per-entry relative error over `tensors`, or a description of the first mismatch.
pub fn check(m: &mut Model, docs: &[EncodedDoc], lambda: f64, tensors: &[&str]) -> Result<f64, String> {
    let mut overall: f64 = 0.0;
    let batch: Vec<&EncodedDoc> = docs.iter().collect();
    let (_, grads) = m.batch_gradient(&batch, lambda, None).map_err(|e| e.to_string())?;
    for &name in tensors {
        let analytic = grads.tensor(name).ok_or_else(|| format!("no tensor {name}"))?.to_vec();
        let len = analytic.len();
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        let mut diff_sq = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..len {
            if (name == "word_emb" || name == "concept_emb") && i < m.config.embed_dim {
                continue; // PAD row is frozen
            }
            let orig = m.params.tensor(name).unwrap()[i];
            m.params.tensor_mut(name).unwrap()[i] = orig + STEP;
            let up = m.batch_loss(&batch, lambda).map_err(|e| e.to_string())?;
            m.params.tensor_mut(name).unwrap()[i] = orig - STEP;
            let down = m.batch_loss(&batch, lambda).map_err(|e| e.to_string())?;
            m.params.tensor_mut(name).unwrap()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[i];
            diff_sq += (a - numeric).powi(2);
            sum_sq += (a + numeric).powi(2);
            let scale = a.abs() + numeric.abs();
            // below this the central difference is dominated by roundoff
            if scale < 1e-6 {
                if (a - numeric).abs() >= 1e-10 {
                    return Err(format!("{name}[{i}]: analytic {a} numeric {numeric}"));
                }
                continue;
            }
            let rel = (a - numeric).abs() / scale;
            worst = worst.max(rel);
            if rel >= TOL {
                return Err(format!("{name}[{i}]: analytic {a} numeric {numeric} rel {rel}"));
            }
            checked += 1;
        }
        if checked == 0 {
            return Err(format!("{name}: no entries with nonzero gradient"));
        }
        let tensor_rel = diff_sq.sqrt() / sum_sq.sqrt();
        if tensor_rel >= TOL {
            return Err(format!("{name}: tensor relative error {tensor_rel}"));
        }
        overall = overall.max(worst);
    }
    Ok(overall)
}

pub const SHARED: [&str; 11] = [
    "word_emb",
    "concept_emb",
    "conv_w",
    "conv_b",
    "label_query",
    "label_out",
    "label_bias",
    "overlap.w1",
    "overlap.w2",
    "gram.w1",
    "gram.w2",
];
