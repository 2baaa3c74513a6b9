//! End-to-end harnesses on synthetic corpora: the augmentation-gap
//! experiment, the λ sweep and the raw-codes baseline.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotator::raw_codes_predict;
use crate::corpus::{generate_synthetic, Document, LabelScheme, SplitCounts, SyntheticCorpus, SyntheticSpec, VariantDistribution};
use crate::eval::{evaluate_scores, evaluate_sets, label_counts, MetricsReport, DEFAULT_KS, DEFAULT_THRESHOLD};
use crate::hashing::config_hash;
use crate::model::{EncodedDoc, Model, ModelConfig, TokenPolicy};
use crate::multitask::{train, AuxConfig, TrainerConfig, TrainingOutcome, TrainingSet, LAMBDA_GRID};
use crate::ontology::Ontology;
use crate::Result;

/// Train on `train`/`dev` and return the outcome.
pub fn fit(
    config: ModelConfig,
    aux: Option<AuxConfig>,
    corpus: &SyntheticCorpus,
    trainer: &TrainerConfig,
    min_df: usize,
) -> Result<(TrainingOutcome, Vec<Document>)> {
    let (train_docs, dev, test) = corpus.split.apply(&corpus.documents);
    let model = Model::from_training(config, aux, &train_docs, corpus.label_space.clone(), Some(&corpus.ontology), min_df)?;
    let outcome = train(model, TrainingSet { train: &train_docs, dev: &dev }, trainer, |_| {})?;
    Ok((outcome, test))
}

/// Score `docs` with `model` and compute the full report. Training label
/// counts drive the frequency buckets when given.
pub fn evaluate_model(model: &Model, docs: &[Document], train_counts: Option<&[usize]>, threshold: f64) -> Result<MetricsReport> {
    let enc: Vec<EncodedDoc> = docs.par_iter().map(|d| model.encode(d)).collect::<Result<_>>()?;
    let scores: Vec<Vec<f64>> = model.predict_all(&enc)?.into_iter().map(|p| p.to_vec()).collect();
    let gold: Vec<Vec<bool>> = enc.into_iter().map(|e| e.gold).collect();
    evaluate_scores(&scores, &gold, &DEFAULT_KS, threshold, train_counts)
}

/// Training-set label counts in label-space order.
pub fn train_label_counts(model: &Model, train: &[Document]) -> Vec<usize> {
    let gold: Vec<Vec<bool>> = train.iter().map(|d| model.labels.encode(&d.labels)).collect();
    label_counts(&gold, model.labels.len())
}

/// Settings of the augmentation-gap experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapExperiment {
    pub corpus: SyntheticSpec,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub min_df: usize,
    pub seeds: Vec<u64>,
    pub augmented: TokenPolicy,
}

impl GapExperiment {
    /// A configuration small enough to run many trainings on one CPU core.
    /// Rare phrase variants fall under the word vocabulary's document
    /// frequency cutoff, so only the concept channel can carry them.
    pub fn desk_scale() -> Self {
        Self {
            corpus: SyntheticSpec {
                vocab_size: 300,
                concept_count: 240,
                label_count: 24,
                docs_per_split: SplitCounts {
                    train: 1000,
                    dev: 300,
                    test: 500,
                },
                mean_doc_length: 50,
                coverage: 0.35,
                variants_per_concept: VariantDistribution::Fixed(5),
                label_signal: 0.9,
                specificity_mismatch: 0.0,
                label_scheme: LabelScheme::NoisyOr { concepts_per_label: 3 },
                two_token_rate: 0.2,
                fanout: 4,
                seed: 0,
            },
            model: ModelConfig {
                embed_dim: 24,
                conv_dim: 24,
                kernel_width: 3,
                learning_rate: 1e-2,
                batch_size: 12,
                dropout: 0.2,
                ..Default::default()
            },
            trainer: TrainerConfig {
                max_epochs: 100,
                patience: 10,
                stop_k: 8,
            },
            min_df: 3,
            seeds: vec![1, 2, 3],
            augmented: TokenPolicy::LINEAR_COMBINATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRun {
    pub seed: u64,
    pub baseline_micro_f1: f64,
    pub augmented_micro_f1: f64,
    pub baseline_epochs: usize,
    pub augmented_epochs: usize,
}

impl GapRun {
    pub fn gap(&self) -> f64 {
        self.augmented_micro_f1 - self.baseline_micro_f1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub variants: usize,
    pub runs: Vec<GapRun>,
    /// Median over seeds of the per-seed micro-F1 difference (augmented minus
    /// baseline), in F1 units.
    pub median_gap: f64,
    pub config_hash: String,
}

/// Train baseline and augmented models on synthetic corpora with a fixed
/// number of phrase variants per concept, one corpus and one pair of models
/// per seed.
pub fn augmentation_gap(exp: &GapExperiment, variants: usize) -> Result<GapReport> {
    let jobs: Vec<(u64, TokenPolicy)> = exp
        .seeds
        .iter()
        .flat_map(|&s| [(s, TokenPolicy::BASELINE), (s, exp.augmented)])
        .collect();
    let results: Vec<(f64, usize)> = jobs
        .par_iter()
        .map(|&(seed, policy)| {
            let mut spec = exp.corpus.clone();
            spec.variants_per_concept = VariantDistribution::Fixed(variants);
            spec.seed = seed;
            let corpus = generate_synthetic(&spec)?;
            let config = ModelConfig {
                policy,
                seed,
                ..exp.model.clone()
            };
            let (outcome, test) = fit(config, None, &corpus, &exp.trainer, exp.min_df)?;
            let report = evaluate_model(&outcome.model, &test, None, DEFAULT_THRESHOLD)?;
            log::info!(
                "variants {variants} seed {seed} {policy}: micro-F1 {:.4} after {} epochs",
                report.f1_micro,
                outcome.log.len()
            );
            Ok((report.f1_micro, outcome.log.len()))
        })
        .collect::<Result<_>>()?;
    let runs: Vec<GapRun> = exp
        .seeds
        .iter()
        .zip(results.chunks(2))
        .map(|(&seed, pair)| GapRun {
            seed,
            baseline_micro_f1: pair[0].0,
            augmented_micro_f1: pair[1].0,
            baseline_epochs: pair[0].1,
            augmented_epochs: pair[1].1,
        })
        .collect();
    let median_gap = median(runs.iter().map(GapRun::gap).collect());
    Ok(GapReport {
        variants,
        runs,
        median_gap,
        config_hash: config_hash(exp),
    })
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// One row of the λ sweep: dev-set coding metrics and auxiliary tagging
/// accuracy after the first and the last epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub auc_macro: Option<f64>,
    pub auc_micro: Option<f64>,
    pub ap_macro: Option<f64>,
    pub ap_micro: Option<f64>,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub r_at_8: Option<f64>,
    pub r_at_15: Option<f64>,
    pub p_at_8: Option<f64>,
    pub p_at_15: Option<f64>,
    pub tagging_first_epoch: Option<f64>,
    pub tagging_last_epoch: Option<f64>,
    pub best_epoch: usize,
    pub config_hash: String,
}

/// Train one multitask model per λ and evaluate on the dev split. Every row
/// carries the hash of the whole sweep configuration.
#[allow(clippy::too_many_arguments)]
pub fn lambda_sweep(
    train_docs: &[Document],
    dev: &[Document],
    labels: &crate::ontology::LabelSpace,
    ontology: Option<&Ontology>,
    config: &ModelConfig,
    aux: AuxConfig,
    trainer: &TrainerConfig,
    min_df: usize,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    let hash = config_hash(&(config, &aux.head, &aux.share_point, trainer, min_df, grid));
    grid.par_iter()
        .map(|&lambda| {
            let aux = AuxConfig { lambda, ..aux };
            let model = Model::from_training(config.clone(), Some(aux), train_docs, labels.clone(), ontology, min_df)?;
            let outcome = train(model, TrainingSet { train: train_docs, dev }, trainer, |_| {})?;
            let report = evaluate_model(&outcome.model, dev, None, DEFAULT_THRESHOLD)?;
            Ok(SweepRow {
                lambda,
                auc_macro: report.auc_macro,
                auc_micro: report.auc_micro,
                ap_macro: report.ap_macro,
                ap_micro: report.ap_micro,
                f1_macro: report.f1_macro,
                f1_micro: report.f1_micro,
                r_at_8: report.recall_at.get(&8).copied(),
                r_at_15: report.recall_at.get(&15).copied(),
                p_at_8: report.precision_at.get(&8).copied(),
                p_at_15: report.precision_at.get(&15).copied(),
                tagging_first_epoch: outcome.log.first().and_then(|e| e.tagging_accuracy),
                tagging_last_epoch: outcome.log.last().and_then(|e| e.tagging_accuracy),
                best_epoch: outcome.best_epoch,
                config_hash: hash.clone(),
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The default λ grid.
pub fn default_grid() -> Vec<f64> {
    LAMBDA_GRID.to_vec()
}

/// Evaluate annotator output directly as label predictions.
pub fn raw_codes_report(docs: &[Document], labels: &crate::ontology::LabelSpace, seed: u64) -> Result<MetricsReport> {
    let pred: Vec<Vec<bool>> = docs
        .iter()
        .map(|d| raw_codes_predict(d.annotations.iter().flatten().map(|a| a.code.as_str()), labels))
        .collect();
    let gold: Vec<Vec<bool>> = docs.iter().map(|d| labels.encode(&d.labels)).collect();
    evaluate_sets(&pred, &gold, &DEFAULT_KS, seed, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_cases() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
