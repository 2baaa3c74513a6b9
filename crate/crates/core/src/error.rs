use std::path::PathBuf;

/// Errors raised anywhere in the coding pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty document: {0}")]
    EmptyDocument(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("coverage unreachable: {0}")]
    CoverageUnreachable(String),

    #[error("unknown code: {0}")]
    UnknownCode(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("cycle in ontology at line {line}: {cycle}")]
    Cycle { line: usize, cycle: String },

    #[error("dangling parent at line {line}: {child} -> {parent}")]
    DanglingParent {
        line: usize,
        child: String,
        parent: String,
    },

    #[error("span out of range: [{start}, {end}) over {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("character offset out of range: [{begin}, {end}) over {len} chars")]
    OffsetOutOfRange { begin: usize, end: usize, len: usize },

    #[error("empty concept set")]
    EmptyConceptSet,

    #[error("empty span")]
    EmptySpan,

    #[error("no spans")]
    NoSpans,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no evaluable labels for {0}")]
    NoEvaluableLabels(&'static str),

    #[error("k = {k} exceeds label count {labels}")]
    KTooLarge { k: usize, labels: usize },

    #[error("missing annotations for document {0}")]
    MissingAnnotations(String),

    #[error("missing split: {0}")]
    MissingSplit(&'static str),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown policy: {0}")]
    UnknownPolicy(String),

    #[error("nothing to plot: {0}")]
    EmptyPlot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyCorpus => "empty_corpus",
            Error::EmptyDocument(_) => "empty_document",
            Error::InvalidSplit(_) => "invalid_split",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::CoverageUnreachable(_) => "coverage_unreachable",
            Error::UnknownCode(_) => "unknown_code",
            Error::Parse { .. } => "parse",
            Error::Cycle { .. } => "cycle",
            Error::DanglingParent { .. } => "dangling_parent",
            Error::SpanOutOfRange { .. } => "span_out_of_range",
            Error::OffsetOutOfRange { .. } => "offset_out_of_range",
            Error::EmptyConceptSet => "empty_concept_set",
            Error::EmptySpan => "empty_span",
            Error::NoSpans => "no_spans",
            Error::Shape(_) => "shape",
            Error::NoEvaluableLabels(_) => "no_evaluable_labels",
            Error::KTooLarge { .. } => "k_too_large",
            Error::MissingAnnotations(_) => "missing_annotations",
            Error::MissingSplit(_) => "missing_split",
            Error::CheckpointMismatch(_) => "checkpoint_mismatch",
            Error::Config(_) => "config",
            Error::UnknownPolicy(_) => "unknown_policy",
            Error::EmptyPlot(_) => "empty_plot",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
