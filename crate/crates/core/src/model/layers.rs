//! Differentiable building blocks with explicit forward and backward passes.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Gradient of the softmax input given the output `p` and upstream `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(a, b)| a * (b - dot)).collect()
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

pub fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform_matrix(rng, rows, cols, bound)
}

/// Two-layer perceptron scoring a vector: `w2 · relu(w1 x + b1)`.
///
/// No output bias: scores only ever feed a softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
}

/// Hidden pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ScorerCache {
    pub hidden_pre: Array1<f64>,
}

impl Scorer {
    pub fn new(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        Self {
            w1: xavier(rng, hidden, input),
            b1: Array1::zeros(hidden),
            w2: xavier(rng, 1, hidden).row(0).to_owned(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array1::zeros(self.w2.len()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn score(&self, x: ArrayView1<f64>) -> (f64, ScorerCache) {
        let hidden_pre = self.w1.dot(&x) + &self.b1;
        let s = hidden_pre.iter().zip(&self.w2).map(|(h, w)| h.max(0.0) * w).sum();
        (s, ScorerCache { hidden_pre })
    }

    /// Accumulate parameter gradients into `grad`; returns d(score)/d(x) scaled by `ds`.
    pub fn backward(&self, x: ArrayView1<f64>, cache: &ScorerCache, ds: f64, grad: &mut Scorer) -> Array1<f64> {
        let mut dh = Array1::zeros(self.b1.len());
        for (j, &h) in cache.hidden_pre.iter().enumerate() {
            grad.w2[j] += ds * h.max(0.0);
            if h > 0.0 {
                dh[j] = ds * self.w2[j];
            }
        }
        for (j, &g) in dh.iter().enumerate() {
            if g != 0.0 {
                grad.b1[j] += g;
                grad.w1.row_mut(j).scaled_add(g, &x);
            }
        }
        self.w1.t().dot(&dh)
    }
}

/// Attention-weighted sum of candidate vectors: returns (Σ α_j v_j, α).
pub fn attention_mix(candidates: &[ArrayView1<f64>], scores: &[f64]) -> (Array1<f64>, Vec<f64>) {
    let alpha = softmax(scores);
    let mut out = Array1::zeros(candidates[0].len());
    for (a, v) in alpha.iter().zip(candidates) {
        out.scaled_add(*a, v);
    }
    (out, alpha)
}

/// Attention over the concepts annotated at one position. `context` is the
/// concatenation of the four neighbouring word embeddings (n-2, n-1, n+1,
/// n+2); each concept is scored on `[context, concept]`.
pub fn overlap_attention(context: ArrayView1<f64>, concepts: &[ArrayView1<f64>], scorer: &Scorer) -> Result<Array1<f64>> {
    if concepts.is_empty() {
        return Err(Error::EmptyConceptSet);
    }
    let scores: Vec<f64> = concepts
        .iter()
        .map(|c| {
            let input = ndarray::concatenate![ndarray::Axis(0), context, *c];
            scorer.score(input.view()).0
        })
        .collect();
    Ok(attention_mix(concepts, &scores).0)
}

/// Hierarchy embedding: attention over a concept and its ancestors, each
/// scored on `[own embedding, ancestor embedding]`. `chain[0]` is the
/// concept itself.
pub fn gram_embed(chain: &[ArrayView1<f64>], scorer: &Scorer) -> Array1<f64> {
    let own = chain[0];
    let scores: Vec<f64> = chain
        .iter()
        .map(|a| {
            let input = ndarray::concatenate![ndarray::Axis(0), own, *a];
            scorer.score(input.view()).0
        })
        .collect();
    attention_mix(chain, &scores).0
}

/// Left zero-padding so a width-`k` convolution preserves length.
pub fn left_pad(kernel_width: usize) -> usize {
    (kernel_width - 1) / 2
}

/// Unfold `x` (d × N) into patches ((k·d) × N) with zero padding.
pub fn im2col(x: ArrayView2<f64>, kernel_width: usize) -> Array2<f64> {
    let (d, n) = x.dim();
    let left = left_pad(kernel_width) as isize;
    let mut p = Array2::zeros((kernel_width * d, n));
    for j in 0..kernel_width {
        let shift = j as isize - left;
        // column c of the patch block reads x column c + shift
        let lo = (-shift).max(0) as usize;
        let hi = ((n as isize - shift).min(n as isize)).max(0) as usize;
        if lo >= hi {
            continue;
        }
        let src = x.slice(s![.., ((lo as isize + shift) as usize)..((hi as isize + shift) as usize)]);
        p.slice_mut(s![j * d..(j + 1) * d, lo..hi]).assign(&src);
    }
    p
}

/// Inverse of [`im2col`] for gradients: sums patch gradients back into columns.
pub fn col2im(dp: ArrayView2<f64>, d: usize, kernel_width: usize) -> Array2<f64> {
    let n = dp.ncols();
    let left = left_pad(kernel_width) as isize;
    let mut dx = Array2::zeros((d, n));
    for j in 0..kernel_width {
        let shift = j as isize - left;
        let lo = (-shift).max(0) as usize;
        let hi = ((n as isize - shift).min(n as isize)).max(0) as usize;
        if lo >= hi {
            continue;
        }
        let mut dst = dx.slice_mut(s![.., ((lo as isize + shift) as usize)..((hi as isize + shift) as usize)]);
        dst += &dp.slice(s![j * d..(j + 1) * d, lo..hi]);
    }
    dx
}

/// Length-preserving convolution followed by tanh: `tanh(W · im2col(x) + b)`.
pub fn convolve(x: ArrayView2<f64>, weight: &Array2<f64>, bias: &Array1<f64>, kernel_width: usize) -> Array2<f64> {
    let p = im2col(x, kernel_width);
    let mut z = weight.dot(&p);
    for mut col in z.columns_mut() {
        col += bias;
    }
    z.mapv_inplace(f64::tanh);
    z
}

/// Per-label attention pooling output.
#[derive(Debug, Clone)]
pub struct LabelAttention {
    /// L × N attention; masked columns are exactly zero.
    pub attention: Array2<f64>,
    /// L × d_c pooled vectors.
    pub pooled: Array2<f64>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

/// For each label: softmax of `query_l · H` over the first `n_valid` columns,
/// pooled vector `H a_l`, probability `σ(out_l · pooled_l + bias_l)`.
pub fn label_attention(
    h: ArrayView2<f64>,
    query: &Array2<f64>,
    out: &Array2<f64>,
    bias: &Array1<f64>,
    n_valid: usize,
) -> LabelAttention {
    let n = h.ncols();
    let n_valid = n_valid.min(n);
    let scores = query.dot(&h);
    let mut attention = Array2::zeros(scores.raw_dim());
    for (l, row) in scores.rows().into_iter().enumerate() {
        let valid = row.slice(s![..n_valid]).to_vec();
        let p = softmax(&valid);
        attention.row_mut(l).slice_mut(s![..n_valid]).assign(&Array1::from(p));
    }
    let pooled = attention.dot(&h.t());
    let logits = (&pooled * out).sum_axis(ndarray::Axis(1)) + bias;
    let probs = logits.mapv(sigmoid);
    LabelAttention {
        attention,
        pooled,
        logits,
        probs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert_abs_diff_eq!(softplus(800.0), 800.0);
        assert_eq!(sigmoid(f64::NEG_INFINITY), 0.0);
        assert_eq!(sigmoid(f64::INFINITY), 1.0);
    }

    #[test]
    fn singleton_overlap_returns_concept() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scorer = Scorer::new(&mut rng, 10, 4);
        let ctx = Array1::from(vec![0.3; 8]);
        let c = array![0.7, -0.2];
        let got = overlap_attention(ctx.view(), &[c.view()], &scorer).unwrap();
        assert_eq!(got, c);
        assert!(matches!(overlap_attention(ctx.view(), &[], &scorer), Err(Error::EmptyConceptSet)));
    }

    #[test]
    fn overlap_weights_from_scores() {
        // w2 picks hidden unit 0, which reads the last input coordinate.
        let scorer = Scorer {
            w1: array![[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]],
            b1: array![0.0],
            w2: array![1.0],
        };
        let ctx = Array1::zeros(4);
        let c1 = array![0.0, 1.0f64.ln()];
        let c2 = array![1.0, 3.0f64.ln()];
        let got = overlap_attention(ctx.view(), &[c1.view(), c2.view()], &scorer).unwrap();
        let want = &c1 * 0.25 + &c2 * 0.75;
        assert_abs_diff_eq!(got[0], want[0], epsilon = 1e-12);
        assert_abs_diff_eq!(got[1], want[1], epsilon = 1e-12);
    }

    #[test]
    fn equal_scores_average() {
        let scorer = Scorer {
            w1: Array2::zeros((3, 4)),
            b1: Array1::zeros(3),
            w2: Array1::ones(3),
        };
        let chain = [array![3.0, 0.0], array![0.0, 3.0], array![0.0, 0.0]];
        let views: Vec<_> = chain.iter().map(|a| a.view()).collect();
        let got = gram_embed(&views, &scorer);
        assert_abs_diff_eq!(got[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(got[1], 1.0, epsilon = 1e-12);
        assert_eq!(gram_embed(&views[..1], &scorer), chain[0]);
    }

    #[test]
    fn convolution_preserves_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [1, 2, 3, 10] {
            for n in [1, 2, 7] {
                let x = uniform_matrix(&mut rng, 4, n, 1.0);
                let w = uniform_matrix(&mut rng, 3, 4 * k, 1.0);
                let h = convolve(x.view(), &w, &Array1::zeros(3), k);
                assert_eq!(h.dim(), (3, n));
            }
        }
        let h = convolve(Array2::zeros((4, 5)).view(), &uniform_matrix(&mut rng, 3, 12, 1.0), &Array1::zeros(3), 3);
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), p> == <x, col2im(p)>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in [1, 4, 5] {
            let x = uniform_matrix(&mut rng, 3, 6, 1.0);
            let p = uniform_matrix(&mut rng, 3 * k, 6, 1.0);
            let lhs = (&im2col(x.view(), k) * &p).sum();
            let rhs = (&x * &col2im(p.view(), 3, k)).sum();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn label_attention_masks_and_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = uniform_matrix(&mut rng, 4, 6, 1.0);
        let q = uniform_matrix(&mut rng, 3, 4, 1.0);
        let o = uniform_matrix(&mut rng, 3, 4, 1.0);
        let b = Array1::zeros(3);
        let la = label_attention(h.view(), &q, &o, &b, 4);
        for row in la.attention.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
            assert_eq!(row[4], 0.0);
            assert_eq!(row[5], 0.0);
        }
        let one = label_attention(h.slice(s![.., ..1]), &q, &o, &b, 1);
        for l in 0..3 {
            assert_eq!(one.attention[[l, 0]], 1.0);
            assert_eq!(one.pooled.row(l), h.column(0));
        }
    }
}
