//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by interval construction, tensor algebra, training and IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval: lo = {lo} > hi = {hi}")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("gradient requested for non-scalar output of shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
