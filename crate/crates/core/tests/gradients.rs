//! Analytic gradients against central finite differences.

mod common;

use common::gradcheck::{check, model, SHARED};
use conceptcode::model::TokenPolicy;
use conceptcode::multitask::{AuxConfig, HeadKind, SharePoint};

#[test]
fn gate_overlap_and_gram_paths() {
    let (mut m, docs) = model(TokenPolicy::LINEAR_COMBINATION, None);
    check(&mut m, &docs, 0.0, &["gate_logits"]).unwrap();
    check(&mut m, &docs, 0.0, &SHARED).unwrap();
    check(&mut m, &docs, 0.0, &["overlap.b1", "gram.b1"]).unwrap();
}

#[test]
fn full_replace_path() {
    let (mut m, docs) = model(TokenPolicy::FULL_REPLACE, None);
    check(&mut m, &docs, 0.0, &SHARED).unwrap();
}

#[test]
fn auxiliary_pre_convolution_linear() {
    let aux = AuxConfig {
        head: HeadKind::Linear,
        share_point: SharePoint::PreConvolution,
        lambda: 0.7,
    };
    let (mut m, docs) = model(TokenPolicy::LINEAR_COMBINATION, Some(aux));
    check(&mut m, &docs, 0.7, &["aux.out_w", "aux.out_b"]).unwrap();
    check(&mut m, &docs, 0.7, &SHARED).unwrap();
    check(&mut m, &docs, 0.7, &["gate_logits"]).unwrap();
}

#[test]
fn auxiliary_post_convolution_mlp() {
    let aux = AuxConfig {
        head: HeadKind::Mlp { hidden: 7 },
        share_point: SharePoint::PostConvolution,
        lambda: 2.5,
    };
    let (mut m, docs) = model(TokenPolicy::BASELINE, Some(aux));
    check(&mut m, &docs, 2.5, &["aux.hidden_w", "aux.hidden_b", "aux.out_w", "aux.out_b"]).unwrap();
    check(&mut m, &docs, 2.5, &["word_emb", "conv_w", "conv_b", "label_query", "label_out"]).unwrap();
}
