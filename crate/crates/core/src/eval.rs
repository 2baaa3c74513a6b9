//! Multi-label ranking and classification metrics.
//!
//! Score and gold matrices are row-per-document, column-per-label.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::ontology::LabelSpace;
use crate::{Error, Result};

pub const DEFAULT_KS: [usize; 2] = [8, 15];
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    Macro,
    Micro,
}

fn check_shapes<A, B>(a: &[Vec<A>], b: &[Vec<B>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} documents", a.len(), b.len())));
    }
    let width = b.first().map_or(0, Vec::len);
    for (i, (ra, rb)) in a.iter().zip(b).enumerate() {
        if ra.len() != rb.len() || rb.len() != width {
            return Err(Error::Shape(format!("row {i}: {} vs {} labels", ra.len(), rb.len())));
        }
    }
    Ok(width)
}

/// Label indices sorted by descending score; ties go to the lower index.
pub fn ranked_labels(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn top_k_hits(scores: &[Vec<f64>], gold: &[Vec<bool>], k: usize) -> Result<Vec<usize>> {
    let width = check_shapes(scores, gold)?;
    if k == 0 || k > width {
        return Err(Error::KTooLarge { k, labels: width });
    }
    Ok(scores
        .iter()
        .zip(gold)
        .map(|(s, g)| ranked_labels(s).into_iter().take(k).filter(|&l| g[l]).count())
        .collect())
}

/// Mean over documents of (gold labels among the top k) / k.
pub fn p_at_k(scores: &[Vec<f64>], gold: &[Vec<bool>], k: usize) -> Result<f64> {
    let hits = top_k_hits(scores, gold, k)?;
    if hits.is_empty() {
        return Ok(0.0);
    }
    Ok(hits.iter().map(|&h| h as f64 / k as f64).sum::<f64>() / hits.len() as f64)
}

/// Mean over documents with at least one gold label of
/// (gold labels among the top k) / (number of gold labels).
pub fn r_at_k(scores: &[Vec<f64>], gold: &[Vec<bool>], k: usize) -> Result<f64> {
    let hits = top_k_hits(scores, gold, k)?;
    recall_from_hits(&hits, gold)
}

fn recall_from_hits(hits: &[usize], gold: &[Vec<bool>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (h, g) in hits.iter().zip(gold) {
        let positives = g.iter().filter(|&&x| x).count();
        if positives > 0 {
            sum += *h as f64 / positives as f64;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// P@k and R@k for score-less predictions: when a document predicts more
/// than k labels, k of them are drawn uniformly with a ChaCha8 stream seeded
/// by `seed` (one stream for the whole matrix, documents in order).
pub fn set_precision_recall_at_k(pred: &[Vec<bool>], gold: &[Vec<bool>], k: usize, seed: u64) -> Result<(f64, f64)> {
    let width = check_shapes(pred, gold)?;
    if k == 0 || k > width {
        return Err(Error::KTooLarge { k, labels: width });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits: Vec<usize> = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| {
            let predicted: Vec<usize> = (0..p.len()).filter(|&l| p[l]).collect();
            let chosen: Vec<usize> = if predicted.len() > k {
                predicted.choose_multiple(&mut rng, k).copied().collect()
            } else {
                predicted
            };
            chosen.into_iter().filter(|&l| g[l]).count()
        })
        .collect();
    let p = if hits.is_empty() {
        0.0
    } else {
        hits.iter().map(|&h| h as f64 / k as f64).sum::<f64>() / hits.len() as f64
    };
    Ok((p, recall_from_hits(&hits, gold)?))
}

pub fn binarize(scores: &[Vec<f64>], threshold: f64) -> Vec<Vec<bool>> {
    scores
        .iter()
        .map(|r| r.iter().map(|&s| s >= threshold).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    fn add(&mut self, pred: bool, gold: bool) {
        match (pred, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }
}

pub fn per_label_confusion(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> Result<Vec<Confusion>> {
    let width = check_shapes(pred, gold)?;
    let mut out = vec![Confusion::default(); width];
    for (p, g) in pred.iter().zip(gold) {
        for l in 0..width {
            out[l].add(p[l], g[l]);
        }
    }
    Ok(out)
}

/// Micro F1 pools counts over the given labels; macro averages per-label F1
/// (a label with no TP, FP or FN scores 0).
pub fn f1_over(confusions: &[Confusion], mode: Average) -> f64 {
    if confusions.is_empty() {
        return 0.0;
    }
    match mode {
        Average::Micro => {
            let pooled = confusions.iter().fold(Confusion::default(), |acc, c| Confusion {
                tp: acc.tp + c.tp,
                fp: acc.fp + c.fp,
                fn_: acc.fn_ + c.fn_,
            });
            pooled.f1()
        }
        Average::Macro => confusions.iter().map(Confusion::f1).sum::<f64>() / confusions.len() as f64,
    }
}

pub fn f1(pred: &[Vec<bool>], gold: &[Vec<bool>], mode: Average) -> Result<f64> {
    Ok(f1_over(&per_label_confusion(pred, gold)?, mode))
}

pub fn f1_scores(scores: &[Vec<f64>], gold: &[Vec<bool>], mode: Average, threshold: f64) -> Result<f64> {
    f1(&binarize(scores, threshold), gold, mode)
}

/// ROC AUC of one score/label column via average ranks (ties count half).
/// `None` when the column lacks positives or negatives.
pub fn binary_auc(scores: &[f64], gold: &[bool]) -> Option<f64> {
    let n_pos = gold.iter().filter(|&&g| g).count();
    let n_neg = gold.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * idx[i..=j].iter().filter(|&&k| gold[k]).count() as f64;
        i = j + 1;
    }
    let p = n_pos as f64;
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// Average precision: sum over distinct score thresholds (descending) of
/// precision times the recall increment. `None` without positives or negatives.
pub fn binary_ap(scores: &[f64], gold: &[bool]) -> Option<f64> {
    let n_pos = gold.iter().filter(|&&g| g).count();
    if n_pos == 0 || n_pos == gold.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            if gold[k] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
        i = j + 1;
    }
    Some(ap)
}

/// A ranking metric averaged over labels, with the labels it had to skip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetric {
    pub value: f64,
    pub skipped: Vec<usize>,
}

fn rank_metric(
    scores: &[Vec<f64>],
    gold: &[Vec<bool>],
    mode: Average,
    name: &'static str,
    metric: fn(&[f64], &[bool]) -> Option<f64>,
) -> Result<RankMetric> {
    let width = check_shapes(scores, gold)?;
    match mode {
        Average::Micro => {
            let s: Vec<f64> = scores.iter().flatten().copied().collect();
            let g: Vec<bool> = gold.iter().flatten().copied().collect();
            metric(&s, &g)
                .map(|value| RankMetric { value, skipped: vec![] })
                .ok_or(Error::NoEvaluableLabels(name))
        }
        Average::Macro => {
            let mut values = Vec::new();
            let mut skipped = Vec::new();
            for l in 0..width {
                let s: Vec<f64> = scores.iter().map(|r| r[l]).collect();
                let g: Vec<bool> = gold.iter().map(|r| r[l]).collect();
                match metric(&s, &g) {
                    Some(v) => values.push(v),
                    None => skipped.push(l),
                }
            }
            if values.is_empty() {
                return Err(Error::NoEvaluableLabels(name));
            }
            Ok(RankMetric {
                value: values.iter().sum::<f64>() / values.len() as f64,
                skipped,
            })
        }
    }
}

pub fn auc(scores: &[Vec<f64>], gold: &[Vec<bool>], mode: Average) -> Result<RankMetric> {
    rank_metric(scores, gold, mode, "auc", binary_auc)
}

pub fn ap(scores: &[Vec<f64>], gold: &[Vec<bool>], mode: Average) -> Result<RankMetric> {
    rank_metric(scores, gold, mode, "ap", binary_ap)
}

/// Label-frequency bucket: rare ≤ 50 < semi-rare ≤ 1000 < common.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Rare,
    SemiRare,
    Common,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Rare, Bucket::SemiRare, Bucket::Common];

    pub fn of(train_count: usize) -> Self {
        match train_count {
            0..=50 => Bucket::Rare,
            51..=1000 => Bucket::SemiRare,
            _ => Bucket::Common,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Rare => "rare",
            Bucket::SemiRare => "semi_rare",
            Bucket::Common => "common",
        }
    }
}

/// Micro F1 within each frequency bucket; empty buckets are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketedF1 {
    pub rare: Option<f64>,
    pub semi_rare: Option<f64>,
    pub common: Option<f64>,
}

impl BucketedF1 {
    pub fn get(&self, b: Bucket) -> Option<f64> {
        match b {
            Bucket::Rare => self.rare,
            Bucket::SemiRare => self.semi_rare,
            Bucket::Common => self.common,
        }
    }
}

pub fn bucketed_f1(pred: &[Vec<bool>], gold: &[Vec<bool>], train_counts: &[usize]) -> Result<BucketedF1> {
    let conf = per_label_confusion(pred, gold)?;
    if train_counts.len() != conf.len() && !pred.is_empty() {
        return Err(Error::Shape(format!("{} counts for {} labels", train_counts.len(), conf.len())));
    }
    let mut out = BucketedF1::default();
    for b in Bucket::ALL {
        let members: Vec<Confusion> = conf
            .iter()
            .zip(train_counts)
            .filter(|(_, &n)| Bucket::of(n) == b)
            .map(|(c, _)| *c)
            .collect();
        let v = (!members.is_empty()).then(|| f1_over(&members, Average::Micro));
        match b {
            Bucket::Rare => out.rare = v,
            Bucket::SemiRare => out.semi_rare = v,
            Bucket::Common => out.common = v,
        }
    }
    Ok(out)
}

/// Occurrences of each label in a set of gold rows.
pub fn label_counts(gold: &[Vec<bool>], n_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; n_labels];
    for row in gold {
        for (c, &g) in counts.iter_mut().zip(row) {
            *c += g as usize;
        }
    }
    counts
}

/// All coding metrics for one evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc_macro: Option<f64>,
    pub auc_micro: Option<f64>,
    pub ap_macro: Option<f64>,
    pub ap_micro: Option<f64>,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub bucketed_f1: Option<BucketedF1>,
    pub tagging_accuracy: Option<f64>,
    pub skipped_auc: Vec<usize>,
    pub skipped_ap: Vec<usize>,
    pub bucket_membership: Option<Vec<Bucket>>,
}

impl MetricsReport {
    pub fn p_at(&self, k: usize) -> Option<f64> {
        self.precision_at.get(&k).copied()
    }

    /// Flat `metrics.json` object: metric name → value, plus skipped-label
    /// and bucket-membership lists keyed by label code.
    pub fn to_json(&self, labels: &LabelSpace) -> Map<String, Value> {
        let mut m = Map::new();
        let opt = |v: Option<f64>| v.map_or(Value::Null, |x| json!(x));
        m.insert("auc_macro".into(), opt(self.auc_macro));
        m.insert("auc_micro".into(), opt(self.auc_micro));
        m.insert("ap_macro".into(), opt(self.ap_macro));
        m.insert("ap_micro".into(), opt(self.ap_micro));
        m.insert("f1_macro".into(), json!(self.f1_macro));
        m.insert("f1_micro".into(), json!(self.f1_micro));
        for (k, v) in &self.recall_at {
            m.insert(format!("r_at_{k}"), json!(v));
        }
        for (k, v) in &self.precision_at {
            m.insert(format!("p_at_{k}"), json!(v));
        }
        if let Some(b) = &self.bucketed_f1 {
            for bucket in Bucket::ALL {
                m.insert(format!("f1_{}", bucket.name()), opt(b.get(bucket)));
            }
        }
        if let Some(t) = self.tagging_accuracy {
            m.insert("tagging_accuracy".into(), json!(t));
        }
        let names = |idx: &[usize]| -> Vec<&str> { idx.iter().map(|&i| labels.codes()[i].as_str()).collect() };
        m.insert(
            "skipped_labels".into(),
            json!({ "auc_macro": names(&self.skipped_auc), "ap_macro": names(&self.skipped_ap) }),
        );
        if let Some(members) = &self.bucket_membership {
            let mut by_bucket = Map::new();
            for bucket in Bucket::ALL {
                let codes: Vec<&str> = members
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| **b == bucket)
                    .map(|(i, _)| labels.codes()[i].as_str())
                    .collect();
                by_bucket.insert(bucket.name().into(), json!(codes));
            }
            m.insert("bucket_membership".into(), Value::Object(by_bucket));
        }
        m
    }
}

/// Ranking ks that fit the label space.
fn usable_ks(ks: &[usize], width: usize) -> impl Iterator<Item = usize> + '_ {
    ks.iter().copied().filter(move |&k| k >= 1 && k <= width)
}

/// Full report from real-valued scores. `train_counts` enables bucketed F1.
pub fn evaluate_scores(
    scores: &[Vec<f64>],
    gold: &[Vec<bool>],
    ks: &[usize],
    threshold: f64,
    train_counts: Option<&[usize]>,
) -> Result<MetricsReport> {
    let width = check_shapes(scores, gold)?;
    let pred = binarize(scores, threshold);
    let auc_macro = auc(scores, gold, Average::Macro).ok();
    let ap_macro = ap(scores, gold, Average::Macro).ok();
    let mut report = MetricsReport {
        auc_micro: auc(scores, gold, Average::Micro).ok().map(|m| m.value),
        ap_micro: ap(scores, gold, Average::Micro).ok().map(|m| m.value),
        skipped_auc: auc_macro.as_ref().map_or_else(|| (0..width).collect(), |m| m.skipped.clone()),
        skipped_ap: ap_macro.as_ref().map_or_else(|| (0..width).collect(), |m| m.skipped.clone()),
        auc_macro: auc_macro.map(|m| m.value),
        ap_macro: ap_macro.map(|m| m.value),
        f1_macro: f1(&pred, gold, Average::Macro)?,
        f1_micro: f1(&pred, gold, Average::Micro)?,
        ..Default::default()
    };
    for k in usable_ks(ks, width) {
        report.precision_at.insert(k, p_at_k(scores, gold, k)?);
        report.recall_at.insert(k, r_at_k(scores, gold, k)?);
    }
    if let Some(counts) = train_counts {
        report.bucketed_f1 = Some(bucketed_f1(&pred, gold, counts)?);
        report.bucket_membership = Some(counts.iter().map(|&c| Bucket::of(c)).collect());
    }
    Ok(report)
}

/// Report for binary predictions without scores (the raw-codes baseline):
/// AUC/AP are not applicable, P@k/R@k use seeded sampling.
pub fn evaluate_sets(
    pred: &[Vec<bool>],
    gold: &[Vec<bool>],
    ks: &[usize],
    seed: u64,
    train_counts: Option<&[usize]>,
) -> Result<MetricsReport> {
    let width = check_shapes(pred, gold)?;
    let mut report = MetricsReport {
        f1_macro: f1(pred, gold, Average::Macro)?,
        f1_micro: f1(pred, gold, Average::Micro)?,
        ..Default::default()
    };
    for k in usable_ks(ks, width) {
        let (p, r) = set_precision_recall_at_k(pred, gold, k, seed)?;
        report.precision_at.insert(k, p);
        report.recall_at.insert(k, r);
    }
    if let Some(counts) = train_counts {
        report.bucketed_f1 = Some(bucketed_f1(pred, gold, counts)?);
        report.bucket_membership = Some(counts.iter().map(|&c| Bucket::of(c)).collect());
    }
    Ok(report)
}
