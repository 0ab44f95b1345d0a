use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("insufficient budget: {budget} available, at least {required} required")]
    InsufficientBudget { budget: f64, required: f64 },

    #[error("sample pool exhausted: requested {requested} rows, {remaining} remaining")]
    PoolExhausted { requested: usize, remaining: usize },

    #[error("sample set is empty")]
    EmptySample,

    #[error("batch too small: {found} rows, at least {required} required")]
    BatchTooSmall { required: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("weight specification is invalid for dimension {dim}: {reason}")]
    WeightMismatch { dim: usize, reason: String },

    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("degenerate subset: both loss coefficients vanish")]
    DegenerateSubset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
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
