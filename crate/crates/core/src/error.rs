use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("truncated gaussian support has negligible mass: Phi(beta) - Phi(alpha) = {mass:e}")]
    DegenerateSupport { mass: f64 },

    #[error("frame {frame}: rotation angle {angle} rad is too close to pi, log map is ambiguous")]
    AmbiguousLog { frame: usize, angle: f64 },

    #[error("frame {frame}: rotation angle {angle} rad cannot be encoded (limit {limit} rad)")]
    Encoding { frame: usize, angle: f64, limit: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
