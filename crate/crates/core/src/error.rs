use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("missing document for docid '{0}'")]
    MissingDocument(String),

    #[error("unknown label '{0}'")]
    UnknownLabel(String),

    #[error(
        "record '{record}': sentence index {index} out of range (document has {len} sentences)"
    )]
    SentenceOutOfRange {
        record: String,
        index: usize,
        len: usize,
    },

    #[error("invalid sample '{id}': {reason}")]
    InvalidSample { id: String, reason: String },

    #[error("unsupported candidate size h={0} (expected 1 or 2)")]
    UnsupportedHops(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss at step {step} (loss = {loss})")]
    NonFinite { step: usize, loss: f64 },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
}

impl Error {
    /// Stable identifier used in one-line CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Parse { .. } => "parse",
            Error::MissingDocument(_) => "missing_document",
            Error::UnknownLabel(_) => "unknown_label",
            Error::SentenceOutOfRange { .. } => "sentence_out_of_range",
            Error::InvalidSample { .. } => "invalid_sample",
            Error::UnsupportedHops(_) => "unsupported_hops",
            Error::Shape(_) => "shape",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::Config(_) => "config",
            Error::Empty(_) => "empty",
            Error::NonFinite { .. } => "non_finite",
            Error::VocabMismatch(_) => "vocab_mismatch",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
