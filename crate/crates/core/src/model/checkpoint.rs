use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::hashing::config_hash;
use crate::ontology::LabelSpace;
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// Self-describing model archive: configuration, vocabularies, label space,
/// gate keys and every parameter tensor, plus the hashes that identify them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub policy: String,
    pub config_hash: String,
    pub vocab_hash: String,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub model: Model,
}

#[derive(Serialize)]
struct VocabKey<'a> {
    words: &'a [String],
    concepts: &'a [String],
    labels: &'a [String],
}

#[derive(Serialize)]
struct ConfigKey<'a> {
    model: &'a super::ModelConfig,
    aux: &'a Option<crate::multitask::AuxConfig>,
}

impl Checkpoint {
    pub fn new(model: Model, best_epoch: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            policy: model.config.policy.to_string(),
            config_hash: Self::model_config_hash(&model),
            vocab_hash: Self::model_vocab_hash(&model),
            best_epoch,
            model,
        }
    }

    pub fn model_vocab_hash(model: &Model) -> String {
        config_hash(&VocabKey {
            words: model.words.entries(),
            concepts: model.concepts.entries(),
            labels: model.labels.codes(),
        })
    }

    pub fn model_config_hash(model: &Model) -> String {
        config_hash(&ConfigKey {
            model: &model.config,
            aux: &model.aux,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    /// Load and verify that the stored hashes still describe the contents.
    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let mut ck: Checkpoint = serde_json::from_reader(r)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        ck.model.rebuild_indices();
        let vocab = Self::model_vocab_hash(&ck.model);
        if vocab != ck.vocab_hash {
            return Err(Error::CheckpointMismatch(format!(
                "vocabulary hash {vocab} does not match recorded {}",
                ck.vocab_hash
            )));
        }
        if ck.policy != ck.model.config.policy.to_string() {
            return Err(Error::CheckpointMismatch(format!(
                "policy {} does not match model configuration {}",
                ck.policy, ck.model.config.policy
            )));
        }
        Ok(ck)
    }

    /// Refuse label spaces that differ from the one the model was trained on.
    pub fn check_labels(&self, labels: &LabelSpace) -> Result<()> {
        if labels.codes() != self.model.labels.codes() {
            return Err(Error::CheckpointMismatch(format!(
                "label space of {} codes differs from the checkpoint's {} codes",
                labels.len(),
                self.model.labels.len()
            )));
        }
        Ok(())
    }

    /// Refuse a vocabulary hash other than the checkpoint's.
    pub fn check_vocab_hash(&self, expected: &str) -> Result<()> {
        if expected != self.vocab_hash {
            return Err(Error::CheckpointMismatch(format!(
                "vocabulary hash {expected} does not match checkpoint {}",
                self.vocab_hash
            )));
        }
        Ok(())
    }
}
