use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the tensor engine, the model and the data pipeline.
#[derive(Debug, Error)]
pub enum AiftError {
    /// Shapes disagree. `context` names the operation and the offending axes.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error for {path}: {detail}")]
    Input { path: PathBuf, detail: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    /// A value fell outside the domain of a function (e.g. log of a non-positive number).
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AiftError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        AiftError::Dimension { op, detail: detail.into() }
    }

    pub fn input(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        AiftError::Input { path: path.into(), detail: detail.into() }
    }
}

pub type Result<T, E = AiftError> = std::result::Result<T, E>;
