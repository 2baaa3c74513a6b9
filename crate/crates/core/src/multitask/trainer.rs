use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::eval::p_at_k;
use crate::model::{stream_rng, Adam, EncodedDoc, Model, STREAM_DROPOUT, STREAM_SHUFFLE};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub max_epochs: usize,
    pub patience: usize,
    /// Early stopping watches dev P@k at this k (clamped to the label count).
    pub stop_k: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            patience: 10,
            stop_k: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a score where higher is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.since_best = 0;
            return StopDecision::Improved;
        }
        self.since_best += 1;
        if self.since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Training and development documents. Annotations are only needed on the
/// training side (and on dev if auxiliary tagging accuracy is wanted).
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a> {
    pub train: &'a [Document],
    pub dev: &'a [Document],
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean joint loss per training document.
    pub loss: f64,
    /// Mean BCE per training document.
    pub bce: f64,
    /// Mean auxiliary NLL per training span; absent without an auxiliary term.
    pub aux_nll: Option<f64>,
    pub dev_p_at_k: f64,
    pub stop_k: usize,
    /// Auxiliary tagging accuracy on dev spans (training spans if dev has no
    /// annotations).
    pub tagging_accuracy: Option<f64>,
    pub improved: bool,
    pub stopped: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Model holding the best-epoch parameters.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_score: f64,
}

/// Optimize the joint loss with early stopping on dev P@k; keeps the best
/// parameters. Deterministic given the model seed.
pub fn train(model: Model, data: TrainingSet<'_>, config: &TrainerConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainingOutcome> {
    if data.train.is_empty() {
        return Err(Error::MissingSplit("train"));
    }
    if data.dev.is_empty() {
        return Err(Error::MissingSplit("dev"));
    }
    if config.max_epochs == 0 || config.patience == 0 || config.stop_k == 0 {
        return Err(Error::Config("max_epochs, patience and stop_k must be positive".into()));
    }
    let mut model = model;
    let lambda = model.aux.map_or(0.0, |a| a.lambda);
    let train_enc: Vec<EncodedDoc> = data
        .train
        .par_iter()
        .map(|d| model.encode_for_training(d))
        .collect::<Result<_>>()?;
    let dev_enc: Vec<EncodedDoc> = data.dev.par_iter().map(|d| model.encode(d)).collect::<Result<_>>()?;
    let dev_gold: Vec<Vec<bool>> = dev_enc.iter().map(|d| d.gold.clone()).collect();
    let tag_docs: Vec<EncodedDoc> = if model.aux.is_none() {
        Vec::new()
    } else if data.dev.iter().all(|d| d.annotations.is_some()) {
        data.dev
            .par_iter()
            .map(|d| model.encode_for_training(d))
            .collect::<Result<_>>()?
    } else {
        train_enc.clone()
    };
    let stop_k = config.stop_k.min(model.labels.len());
    let mut adam = Adam::new(&model.params, model.config.learning_rate);
    let mut shuffle_rng = stream_rng(model.config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = stream_rng(model.config.seed, STREAM_DROPOUT);
    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = model.params.clone();
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut bce = 0.0;
        let mut loss = 0.0;
        let mut nll = 0.0;
        let mut spans = 0usize;
        for chunk in order.chunks(model.config.batch_size) {
            let batch: Vec<&EncodedDoc> = chunk.iter().map(|&i| &train_enc[i]).collect();
            let (l, grads) = model.batch_gradient(&batch, lambda, Some(&mut dropout_rng))?;
            bce += l.bce;
            loss += l.total();
            nll += l.aux_nll;
            spans += l.spans;
            adam.step(&mut model.params, &grads);
        }
        let n = train_enc.len() as f64;
        let scores: Vec<Vec<f64>> = model.predict_all(&dev_enc)?.into_iter().map(|p| p.to_vec()).collect();
        let dev_p = p_at_k(&scores, &dev_gold, stop_k)?;
        let tagging_accuracy = tagging_accuracy_over(&model, &tag_docs)?;
        let decision = stopper.observe(epoch, dev_p);
        if decision == StopDecision::Improved {
            best_params = model.params.clone();
        }
        let entry = EpochLog {
            epoch,
            loss: loss / n,
            bce: bce / n,
            aux_nll: (spans > 0).then(|| nll / spans as f64),
            dev_p_at_k: dev_p,
            stop_k,
            tagging_accuracy,
            improved: decision == StopDecision::Improved,
            stopped: decision == StopDecision::Stop,
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} dev P@{stop_k} {:.4}{}",
            entry.loss,
            dev_p,
            if entry.improved { " *" } else { "" }
        );
        on_epoch(&entry);
        log.push(entry);
        if decision == StopDecision::Stop {
            break;
        }
    }
    model.params = best_params;
    Ok(TrainingOutcome {
        model,
        log,
        best_epoch: stopper.best_epoch(),
        best_score: stopper.best().unwrap_or(0.0),
    })
}

/// Auxiliary tagging accuracy over every span of `docs`; `None` when there
/// are no spans.
pub fn tagging_accuracy_over(model: &Model, docs: &[EncodedDoc]) -> Result<Option<f64>> {
    if model.params.aux.is_none() {
        return Ok(None);
    }
    let pairs: Vec<Vec<(usize, usize)>> = docs.par_iter().map(|d| model.tag_spans(d)).collect::<Result<_>>()?;
    let (pred, target): (Vec<usize>, Vec<usize>) = pairs.into_iter().flatten().unzip();
    if target.is_empty() {
        return Ok(None);
    }
    super::tagging_accuracy(&pred, &target).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_at_patience_boundary() {
        let mut es = EarlyStopping::new(10);
        assert_eq!(es.observe(1, 0.5), StopDecision::Improved);
        let mut stopped_at = None;
        for epoch in 2..=12 {
            if es.observe(epoch, 0.4) == StopDecision::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(11));
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut es = EarlyStopping::new(2);
        es.observe(1, 0.5);
        assert_eq!(es.observe(2, 0.5), StopDecision::Continue);
        assert_eq!(es.observe(3, 0.6), StopDecision::Improved);
    }
}
