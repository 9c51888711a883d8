//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor operations, the model pipeline and file I/O.
#[derive(Error, Debug)]
pub enum Error {
    /// Two tensors (or a tensor and an operation contract) disagree on shape.
    #[error("shape mismatch in {op}: {expected} vs {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    /// An operation argument is outside its contract.
    #[error("invalid argument to {op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    /// A numerical guard tripped (NaN/Inf where finite values are required).
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Malformed snapshot, checkpoint or archive contents.
    #[error("bad file format in {path}: {message}")]
    BadFormat { path: String, message: String },

    /// Configuration file or key problems.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(op: &'static str, message: impl ToString) -> Self {
        Error::InvalidArgument {
            op,
            message: message.to_string(),
        }
    }
}
