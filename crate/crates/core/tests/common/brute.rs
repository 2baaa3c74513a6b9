//! Brute-force reference implementations of the coding metrics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use conceptcode::eval::{self, Average, Bucket};
use conceptcode::multitask::tagging_accuracy;

pub const INSTANCES: usize = 200;
pub const TOL: f64 = 1e-9;

pub struct Instance {
    pub scores: Vec<Vec<f64>>,
    pub gold: Vec<Vec<bool>>,
    pub counts: Vec<usize>,
}

/// Scores are drawn from a small grid so ties are common.
pub fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let docs = rng.gen_range(2..9);
    let labels = rng.gen_range(2..8);
    let scores = (0..docs)
        .map(|_| (0..labels).map(|_| rng.gen_range(0..6) as f64 / 5.0).collect())
        .collect();
    let rate = rng.gen_range(0.1..0.7);
    let gold = (0..docs)
        .map(|_| (0..labels).map(|_| rng.gen_bool(rate)).collect())
        .collect();
    let counts = (0..labels).map(|_| [0, 20, 50, 51, 700, 1000, 1001, 5000][rng.gen_range(0..8)]).collect();
    Instance { scores, gold, counts }
}

pub fn column<T: Copy>(m: &[Vec<T>], l: usize) -> Vec<T> {
    m.iter().map(|r| r[l]).collect()
}

pub fn flatten<T: Copy>(m: &[Vec<T>]) -> Vec<T> {
    m.iter().flatten().copied().collect()
}

/// Fraction of (positive, negative) pairs ordered correctly, ties half.
pub fn auc_pairs(s: &[f64], g: &[bool]) -> Option<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..s.len() {
        for j in 0..s.len() {
            if g[i] && !g[j] {
                pairs += 1;
                total += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0).then(|| total / pairs as f64)
}

/// For each distinct threshold t (descending): precision(≥t) · Δrecall(≥t).
pub fn ap_steps(s: &[f64], g: &[bool]) -> Option<f64> {
    let positives = g.iter().filter(|&&x| x).count();
    if positives == 0 || positives == g.len() {
        return None;
    }
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let selected: Vec<usize> = (0..s.len()).filter(|&i| s[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| g[i]).count();
        let recall = tp as f64 / positives as f64;
        ap += tp as f64 / selected.len() as f64 * (recall - prev);
        prev = recall;
    }
    Some(ap)
}

pub fn macro_of(values: Vec<Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn f1_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

pub fn counts_over(pred: &[bool], gold: &[bool]) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            _ => {}
        }
    }
    c
}

/// Top k by exhaustively counting, for each label, how many labels beat it.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    (0..scores.len())
        .filter(|&l| {
            let ahead = (0..scores.len())
                .filter(|&o| scores[o] > scores[l] || (scores[o] == scores[l] && o < l))
                .count();
            ahead < k
        })
        .collect()
}

fn close(what: &str, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= TOL {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, oracle {want}"))
    }
}

fn close_opt(what: &str, got: Option<f64>, want: Option<f64>) -> Result<(), String> {
    match (got, want) {
        (Some(a), Some(b)) => close(what, a, b),
        (None, None) => Ok(()),
        (a, b) => Err(format!("{what}: got {a:?}, oracle {b:?}")),
    }
}

pub fn verify_ranking(inst: &Instance) -> Result<(), String> {
    let width = inst.gold[0].len();
    let want = macro_of((0..width).map(|l| auc_pairs(&column(&inst.scores, l), &column(&inst.gold, l))).collect());
    close_opt("macro AUC", eval::auc(&inst.scores, &inst.gold, Average::Macro).ok().map(|m| m.value), want)?;
    let want = auc_pairs(&flatten(&inst.scores), &flatten(&inst.gold));
    close_opt("micro AUC", eval::auc(&inst.scores, &inst.gold, Average::Micro).ok().map(|m| m.value), want)?;
    let want = macro_of((0..width).map(|l| ap_steps(&column(&inst.scores, l), &column(&inst.gold, l))).collect());
    close_opt("macro AP", eval::ap(&inst.scores, &inst.gold, Average::Macro).ok().map(|m| m.value), want)?;
    let want = ap_steps(&flatten(&inst.scores), &flatten(&inst.gold));
    close_opt("micro AP", eval::ap(&inst.scores, &inst.gold, Average::Micro).ok().map(|m| m.value), want)
}

pub fn verify_f1_and_buckets(inst: &Instance) -> Result<(), String> {
    let width = inst.gold[0].len();
    let pred = eval::binarize(&inst.scores, 0.5);
    for row in 0..pred.len() {
        for l in 0..width {
            if pred[row][l] != (inst.scores[row][l] >= 0.5) {
                return Err(format!("binarize mismatch at ({row}, {l})"));
            }
        }
    }
    let per_label: Vec<(usize, usize, usize)> =
        (0..width).map(|l| counts_over(&column(&pred, l), &column(&inst.gold, l))).collect();
    let macro_f1 = per_label.iter().map(|&(a, b, c)| f1_counts(a, b, c)).sum::<f64>() / width as f64;
    let (tp, fp, fn_) = counts_over(&flatten(&pred), &flatten(&inst.gold));
    close("macro F1", eval::f1(&pred, &inst.gold, Average::Macro).map_err(|e| e.to_string())?, macro_f1)?;
    close("micro F1", eval::f1(&pred, &inst.gold, Average::Micro).map_err(|e| e.to_string())?, f1_counts(tp, fp, fn_))?;

    let buckets = eval::bucketed_f1(&pred, &inst.gold, &inst.counts).map_err(|e| e.to_string())?;
    for (bucket, lo, hi) in [(Bucket::Rare, 0, 50), (Bucket::SemiRare, 51, 1000), (Bucket::Common, 1001, usize::MAX)] {
        let members: Vec<usize> = (0..width).filter(|&l| (lo..=hi).contains(&inst.counts[l])).collect();
        let want = (!members.is_empty()).then(|| {
            let (mut a, mut b, mut c) = (0, 0, 0);
            for &l in &members {
                a += per_label[l].0;
                b += per_label[l].1;
                c += per_label[l].2;
            }
            f1_counts(a, b, c)
        });
        close_opt(bucket.name(), buckets.get(bucket), want)?;
    }
    Ok(())
}

pub fn verify_top_k(inst: &Instance) -> Result<(), String> {
    let width = inst.gold[0].len();
    for k in 1..=width {
        let mut p = 0.0;
        let mut r = 0.0;
        let mut with_gold = 0;
        for (s, g) in inst.scores.iter().zip(&inst.gold) {
            let top = top_k(s, k);
            let hits = top.iter().filter(|&&l| g[l]).count() as f64;
            p += hits / k as f64;
            let positives = g.iter().filter(|&&x| x).count();
            if positives > 0 {
                r += hits / positives as f64;
                with_gold += 1;
            }
        }
        let n = inst.scores.len() as f64;
        close(&format!("P@{k}"), eval::p_at_k(&inst.scores, &inst.gold, k).map_err(|e| e.to_string())?, p / n)?;
        let want_r = if with_gold == 0 { 0.0 } else { r / with_gold as f64 };
        close(&format!("R@{k}"), eval::r_at_k(&inst.scores, &inst.gold, k).map_err(|e| e.to_string())?, want_r)?;
    }
    Ok(())
}

/// Random predicted/target span indices checked against a plain loop count.
pub fn verify_tagging(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.gen_range(1..60);
    let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
    let predicted: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
    let mut hits = 0;
    for i in 0..n {
        if predicted[i] == targets[i] {
            hits += 1;
        }
    }
    close("tagging accuracy", tagging_accuracy(&predicted, &targets).map_err(|e| e.to_string())?, hits as f64 / n as f64)
}

/// label 1: TP 1, FP 1; label 2: FN 1. Pooled F1 is 0.5, averaged F1 is 1/3.
pub fn verify_hand_case() -> Result<(), String> {
    let pred = vec![vec![true, false], vec![true, false]];
    let gold = vec![vec![true, false], vec![false, true]];
    close("micro F1", eval::f1(&pred, &gold, Average::Micro).map_err(|e| e.to_string())?, 0.5)?;
    close("macro F1", eval::f1(&pred, &gold, Average::Macro).map_err(|e| e.to_string())?, 1.0 / 3.0)
}
