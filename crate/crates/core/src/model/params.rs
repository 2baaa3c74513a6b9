use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layers::Scorer;
use crate::multitask::AuxHead;

/// Every trainable tensor of the classifier (and the optional auxiliary head).
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub word_emb: Array2<f64>,
    pub concept_emb: Array2<f64>,
    pub gate_logits: Array1<f64>,
    pub overlap: Scorer,
    pub gram: Scorer,
    pub conv_w: Array2<f64>,
    pub conv_b: Array1<f64>,
    pub label_query: Array2<f64>,
    pub label_out: Array2<f64>,
    pub label_bias: Array1<f64>,
    pub aux: Option<AuxHead>,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Self {
            word_emb: Array2::zeros(self.word_emb.raw_dim()),
            concept_emb: Array2::zeros(self.concept_emb.raw_dim()),
            gate_logits: Array1::zeros(self.gate_logits.len()),
            overlap: self.overlap.zeros_like(),
            gram: self.gram.zeros_like(),
            conv_w: Array2::zeros(self.conv_w.raw_dim()),
            conv_b: Array1::zeros(self.conv_b.len()),
            label_query: Array2::zeros(self.label_query.raw_dim()),
            label_out: Array2::zeros(self.label_out.raw_dim()),
            label_bias: Array1::zeros(self.label_bias.len()),
            aux: self.aux.as_ref().map(AuxHead::zeros_like),
        }
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("word_emb", self.word_emb.as_slice().unwrap()),
            ("concept_emb", self.concept_emb.as_slice().unwrap()),
            ("gate_logits", self.gate_logits.as_slice().unwrap()),
            ("overlap.w1", self.overlap.w1.as_slice().unwrap()),
            ("overlap.b1", self.overlap.b1.as_slice().unwrap()),
            ("overlap.w2", self.overlap.w2.as_slice().unwrap()),
            ("gram.w1", self.gram.w1.as_slice().unwrap()),
            ("gram.b1", self.gram.b1.as_slice().unwrap()),
            ("gram.w2", self.gram.w2.as_slice().unwrap()),
            ("conv_w", self.conv_w.as_slice().unwrap()),
            ("conv_b", self.conv_b.as_slice().unwrap()),
            ("label_query", self.label_query.as_slice().unwrap()),
            ("label_out", self.label_out.as_slice().unwrap()),
            ("label_bias", self.label_bias.as_slice().unwrap()),
        ];
        if let Some(aux) = &self.aux {
            if let Some((w, b)) = &aux.hidden {
                out.push(("aux.hidden_w", w.as_slice().unwrap()));
                out.push(("aux.hidden_b", b.as_slice().unwrap()));
            }
            out.push(("aux.out_w", aux.out_w.as_slice().unwrap()));
            out.push(("aux.out_b", aux.out_b.as_slice().unwrap()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("word_emb", self.word_emb.as_slice_mut().unwrap()),
            ("concept_emb", self.concept_emb.as_slice_mut().unwrap()),
            ("gate_logits", self.gate_logits.as_slice_mut().unwrap()),
            ("overlap.w1", self.overlap.w1.as_slice_mut().unwrap()),
            ("overlap.b1", self.overlap.b1.as_slice_mut().unwrap()),
            ("overlap.w2", self.overlap.w2.as_slice_mut().unwrap()),
            ("gram.w1", self.gram.w1.as_slice_mut().unwrap()),
            ("gram.b1", self.gram.b1.as_slice_mut().unwrap()),
            ("gram.w2", self.gram.w2.as_slice_mut().unwrap()),
            ("conv_w", self.conv_w.as_slice_mut().unwrap()),
            ("conv_b", self.conv_b.as_slice_mut().unwrap()),
            ("label_query", self.label_query.as_slice_mut().unwrap()),
            ("label_out", self.label_out.as_slice_mut().unwrap()),
            ("label_bias", self.label_bias.as_slice_mut().unwrap()),
        ];
        if let Some(aux) = &mut self.aux {
            if let Some((w, b)) = &mut aux.hidden {
                out.push(("aux.hidden_w", w.as_slice_mut().unwrap()));
                out.push(("aux.hidden_b", b.as_slice_mut().unwrap()));
            }
            out.push(("aux.out_w", aux.out_w.as_slice_mut().unwrap()));
            out.push(("aux.out_b", aux.out_b.as_slice_mut().unwrap()));
        }
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.tensors_mut().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.tensors().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &Params, learning_rate: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((_, p), (_, g)), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                if gi == 0.0 && m[i] == 0.0 && v[i] == 0.0 {
                    continue;
                }
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}
