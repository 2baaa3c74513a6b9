//! Concept-augmented multi-label clinical coding.
//!
//! The crate is organized as a pipeline:
//!
//! - [`corpus`]: documents, preprocessing, vocabularies, patient-disjoint
//!   splits and a seeded synthetic corpus generator.
//! - [`ontology`]: code hierarchy, phrase dictionary and label space.
//! - [`annotator`]: greedy longest-match dictionary annotation, per-token
//!   concept alignment, the raw-codes baseline and import of character-offset
//!   annotations produced by external tools.
//! - [`model`]: the convolutional per-label-attention classifier with
//!   token-composition policies, overlap attention and hierarchy embeddings.
//! - [`multitask`]: the auxiliary "predict the annotator" head, joint loss
//!   and the trainer with early stopping.
//! - [`eval`]: ranking and classification metrics.
//! - [`experiment`]: harnesses that drive whole training runs on synthetic data.

pub mod annotator;
pub mod corpus;
mod error;
pub mod eval;
pub mod experiment;
pub mod hashing;
pub mod model;
pub mod multitask;
pub mod ontology;
pub mod plot;

pub use error::{Error, Result};
