use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid covariance matrix: {0}")]
    InvalidCovariance(String),

    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid initialization: {0}")]
    InvalidInitialization(String),

    #[error("insufficient samples: need at least {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("degenerate moments: zero variance in coordinate(s) {0:?}")]
    DegenerateMoments(Vec<usize>),

    #[error("moments outside factor support in coordinate {coord}: mean {mean} <= shift {shift}")]
    SupportViolation { coord: usize, mean: f64, shift: f64 },

    #[error("grid covers only {covered:.3e} of the variational mass (need {required:.3e})")]
    Coverage { covered: f64, required: f64 },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
