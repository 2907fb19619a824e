use std::io;

use thiserror::Error;

/// Errors produced by index construction, search, and file handling.
#[derive(Debug, Error)]
pub enum BbcError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero-norm vector under cosine metric")]
    ZeroNorm,

    #[error("distance is NaN")]
    NanDistance,

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BbcError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(BbcError::InvalidParameter(msg.into()))
}
