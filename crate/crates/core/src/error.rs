use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in record {index}")]
    NonFinite { index: usize },

    #[error("training diverged at epoch {epoch}: non-finite parameter")]
    Diverged { epoch: usize },

    #[error("sample-size bound undefined: (sqrt(C) + 1) * pi_p = {value} must be < 1")]
    BoundUndefined { value: f64 },

    #[error("invalid hyper-parameter: {0}")]
    InvalidHyper(String),

    #[error("absolute continuity violated at support point {index}")]
    AbsoluteContinuity { index: usize },

    #[error("division by zero at support point {index}")]
    ZeroDenominator { index: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("wrong model kind: expected {expected}, got {actual}")]
    KindMismatch { expected: String, actual: String },

    #[error("unknown item index {item} (num_items = {num_items})")]
    UnknownItem { item: usize, num_items: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
