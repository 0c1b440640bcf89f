use thiserror::Error;

use crate::tensor::Dims;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimMismatch { op: &'static str, left: Dims, right: Dims },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid model: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed tensor dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
