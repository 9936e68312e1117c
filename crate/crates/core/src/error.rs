use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed wav file {path}: {reason}")]
    MalformedWav { path: PathBuf, reason: String },
    #[error("unsupported wav encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },
    #[error("signal has no samples")]
    EmptySignal,

    #[error("bad annotation header: {0}")]
    BadHeader(String),
    #[error("bad label value {value:?} at line {line}")]
    BadLabelValue { value: String, line: usize },
    #[error("end time precedes start time at line {line} ({onset} >= {offset})")]
    NonMonotoneTimes { line: usize, onset: f64, offset: f64 },

    #[error("class {0} has no segments")]
    EmptyClass(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("negative pool is empty")]
    EmptyNegativePool,
    #[error("expected {expected} shots, found {found}")]
    WrongShotCount { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("batch too small for batch normalisation ({0} values per channel)")]
    DegenerateBatch(usize),
    #[error("non-finite value produced in {0}")]
    NumericFailure(String),
    #[error("unbalanced edges: {0}")]
    UnbalancedEdges(String),

    #[error("bad feature cache: {0}")]
    BadCache(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericFailure(_))
    }
}
