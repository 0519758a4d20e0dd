use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("degenerate system: {0}")]
    Degenerate(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("phase unwrapping failed: {0}")]
    Unwrap(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
