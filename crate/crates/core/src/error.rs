use std::path::PathBuf;

use crate::inversion::TrajectoryRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not an embedding file (magic {found:?})")]
    BadMagic { found: [u8; 4] },

    #[error("malformed embedding header: {0}")]
    BadHeader(String),

    #[error("payload length mismatch: header promises {expected} bytes, found {actual}")]
    PayloadLength { expected: u64, actual: u64 },

    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },

    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("zero-norm vector where a direction is required")]
    ZeroNorm,

    #[error("regularized covariance is not positive definite (pivot {pivot}); increase --shrinkage")]
    NotPositiveDefinite { pivot: usize },

    #[error("need at least {needed} rows, got {actual}")]
    TooFewRows { needed: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("non-finite gradient at optimizer step {step}")]
    NonFiniteGradient { step: u64 },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss {
        step: usize,
        trajectory: Vec<TrajectoryRecord>,
    },

    #[error("encoder oracle `{endpoint}`: {message}")]
    Transport { endpoint: String, message: String },

    #[error("encoder oracle `{endpoint}` changed embedding dimension from {first} to {now}")]
    DimensionDrift { endpoint: String, first: usize, now: usize },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
