use thiserror::Error;

/// Errors raised when an operation is given arguments it cannot accept.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected} but got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("data length {len} does not match shape {shape:?} ({numel} elements)")]
    DataLength {
        len: usize,
        shape: Vec<usize>,
        numel: usize,
    },
    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        TensorError::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
