//! Auxiliary "predict the annotator" task: span representations, the
//! auxiliary head, the joint loss and the trainer.
//!
//! The auxiliary head only runs during training. Inference never reads
//! annotations unless the token policy itself consumes them.

mod trainer;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::layers::{softmax, xavier};
use crate::{Error, Result};

pub use trainer::{tagging_accuracy_over, train, EarlyStopping, EpochLog, StopDecision, TrainerConfig, TrainingOutcome, TrainingSet};

/// Default hidden width of the MLP head.
pub const AUX_HIDDEN: usize = 700;

/// The λ grid of the sweep harness.
pub const LAMBDA_GRID: [f64; 9] = [0.001, 0.01, 0.1, 0.5, 1.0, 10.0, 50.0, 100.0, 1000.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharePoint {
    /// Spans read the composed input columns (embedding size).
    PreConvolution,
    /// Spans read the convolution output columns.
    PostConvolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxConfig {
    pub head: HeadKind,
    pub share_point: SharePoint,
    pub lambda: f64,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self {
            head: HeadKind::Linear,
            share_point: SharePoint::PreConvolution,
            lambda: 1.0,
        }
    }
}

impl AuxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite nonnegative number, got {}", self.lambda)));
        }
        if let HeadKind::Mlp { hidden: 0 } = self.head {
            return Err(Error::Config("aux hidden size must be positive".into()));
        }
        Ok(())
    }
}

/// Softmax classifier over the concept vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxHead {
    pub hidden: Option<(Array2<f64>, Array1<f64>)>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct AuxCache {
    hidden_pre: Option<Array1<f64>>,
    pub probs: Vec<f64>,
}

impl AuxHead {
    pub fn new(rng: &mut impl Rng, kind: HeadKind, input: usize, n_codes: usize) -> Self {
        match kind {
            HeadKind::Linear => Self {
                hidden: None,
                out_w: xavier(rng, n_codes, input),
                out_b: Array1::zeros(n_codes),
            },
            HeadKind::Mlp { hidden } => Self {
                hidden: Some((xavier(rng, hidden, input), Array1::zeros(hidden))),
                out_w: xavier(rng, n_codes, hidden),
                out_b: Array1::zeros(n_codes),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self
                .hidden
                .as_ref()
                .map(|(w, b)| (Array2::zeros(w.raw_dim()), Array1::zeros(b.len()))),
            out_w: Array2::zeros(self.out_w.raw_dim()),
            out_b: Array1::zeros(self.out_b.len()),
        }
    }

    pub fn n_codes(&self) -> usize {
        self.out_b.len()
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some((w, _)) => w.ncols(),
            None => self.out_w.ncols(),
        }
    }

    pub fn forward(&self, z: ArrayView1<f64>) -> AuxCache {
        let (features, hidden_pre) = match &self.hidden {
            Some((w, b)) => {
                let pre = w.dot(&z) + b;
                (pre.mapv(|v| v.max(0.0)), Some(pre))
            }
            None => (z.to_owned(), None),
        };
        let logits = self.out_w.dot(&features) + &self.out_b;
        AuxCache {
            hidden_pre,
            probs: softmax(logits.as_slice().unwrap()),
        }
    }

    /// Backpropagate `dlogits`; accumulates into `grad` and returns d/dz.
    pub fn backward(&self, z: ArrayView1<f64>, cache: &AuxCache, dlogits: &Array1<f64>, grad: &mut AuxHead) -> Array1<f64> {
        grad.out_b += dlogits;
        match (&self.hidden, &cache.hidden_pre, &mut grad.hidden) {
            (Some((w, _)), Some(pre), Some((gw, gb))) => {
                let features = pre.mapv(|v| v.max(0.0));
                outer_add(&mut grad.out_w, dlogits, &features);
                let mut dh = self.out_w.t().dot(dlogits);
                dh.zip_mut_with(pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0
                    }
                });
                *gb += &dh;
                outer_add(gw, &dh, &z.to_owned());
                w.t().dot(&dh)
            }
            _ => {
                outer_add(&mut grad.out_w, dlogits, &z.to_owned());
                self.out_w.t().dot(dlogits)
            }
        }
    }
}

fn outer_add(m: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            m.row_mut(i).scaled_add(ai, b);
        }
    }
}

/// Elementwise maximum over the span columns `[start, end)` of a d × N
/// representation. Also returns, per dimension, the column holding the max.
pub fn span_repr(columns: ArrayView2<f64>, start: usize, end: usize) -> Result<(Array1<f64>, Vec<usize>)> {
    if start >= end {
        return Err(Error::EmptySpan);
    }
    if end > columns.ncols() {
        return Err(Error::SpanOutOfRange {
            start,
            end,
            len: columns.ncols(),
        });
    }
    let d = columns.nrows();
    let mut z = columns.column(start).to_owned();
    let mut arg = vec![start; d];
    for n in start + 1..end {
        for i in 0..d {
            if columns[[i, n]] > z[i] {
                z[i] = columns[[i, n]];
                arg[i] = n;
            }
        }
    }
    Ok((z, arg))
}

/// Distribution over the concept vocabulary for one span representation.
pub fn aux_forward(z: ArrayView1<f64>, head: &AuxHead) -> Vec<f64> {
    head.forward(z).probs
}

/// Binary cross-entropy averaged over labels.
pub fn bce(probs: &[f64], gold: &[bool]) -> f64 {
    const EPS: f64 = 1e-15;
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .zip(gold)
        .map(|(&p, &y)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// Sum of per-document BCE plus λ times the mean auxiliary negative
/// log-likelihood over all spans. An empty span batch adds nothing.
///
/// `spans` holds (auxiliary distribution, target index) pairs.
pub fn joint_loss(probs: &[Vec<f64>], gold: &[Vec<bool>], spans: &[(Vec<f64>, usize)], lambda: f64) -> f64 {
    let main: f64 = probs.iter().zip(gold).map(|(p, g)| bce(p, g)).sum();
    if spans.is_empty() || lambda == 0.0 {
        return main;
    }
    let nll: f64 = spans.iter().map(|(dist, t)| -dist[*t].max(f64::MIN_POSITIVE).ln()).sum();
    main + lambda * nll / spans.len() as f64
}

/// Fraction of spans whose argmax prediction equals the target.
pub fn tagging_accuracy(predicted: &[usize], targets: &[usize]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::NoSpans);
    }
    if predicted.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} spans", predicted.len(), targets.len())));
    }
    let hits = predicted.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn span_max() {
        let cols = array![[1.0, 3.0], [5.0, 2.0]];
        assert_eq!(span_repr(cols.view(), 0, 2).unwrap().0, array![3.0, 5.0]);
        assert_eq!(span_repr(cols.view(), 1, 2).unwrap().0, array![3.0, 2.0]);
        let neg = array![[-1.0, -3.0], [-2.0, 0.0]];
        assert_eq!(span_repr(neg.view(), 0, 2).unwrap().0, array![-1.0, 0.0]);
        assert!(matches!(span_repr(cols.view(), 1, 1), Err(Error::EmptySpan)));
    }

    #[test]
    fn zero_head_is_uniform() {
        let head = AuxHead {
            hidden: None,
            out_w: Array2::zeros((4, 3)),
            out_b: Array1::zeros(4),
        };
        let p = aux_forward(array![1.0, -2.0, 0.5].view(), &head);
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn random_head_distribution_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [HeadKind::Linear, HeadKind::Mlp { hidden: 16 }] {
            let head = AuxHead::new(&mut rng, kind, 5, 11);
            for _ in 0..20 {
                let z = Array1::from_shape_simple_fn(5, || rng.gen_range(-3.0..3.0));
                let p = aux_forward(z.view(), &head);
                assert!(p.iter().all(|&x| x >= 0.0));
                assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn joint_loss_cases() {
        let probs = vec![vec![0.8, 0.3]];
        let gold = vec![vec![true, false]];
        let main = bce(&probs[0], &gold[0]);
        assert_eq!(joint_loss(&probs, &gold, &[(vec![0.25; 4], 2)], 0.0), main);
        assert_eq!(joint_loss(&probs, &gold, &[], 1.0), main);
        let one = joint_loss(&probs, &gold, &[(vec![0.25; 4], 2)], 1.0);
        assert_abs_diff_eq!(one - main, 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(one - main, 1.3863, epsilon = 1e-4);
    }

    #[test]
    fn tagging_accuracy_cases() {
        assert_eq!(tagging_accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(tagging_accuracy(&[1, 2, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.75);
        assert!(matches!(tagging_accuracy(&[], &[]), Err(Error::NoSpans)));
    }
}
