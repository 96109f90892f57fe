//! Crate-wide error type.
//!
//! Shape mismatches name both offending shapes so a failing call can be
//! diagnosed from the message alone; contract violations are precondition
//! breaks (wrong task mode, indivisible extents); numeric failures cover
//! non-finite values where finiteness is part of the contract.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible, e.g. "matmul lhs [4, 5] rhs [3, 7]".
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration value is out of its documented domain.
    #[error("invalid config: {0}")]
    Config(String),

    /// A documented precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value that must be finite is NaN or infinite.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed serialized data (tensor files, checkpoints, spec strings).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Formats a shape for error messages: `[2, 3, 4]`.
pub fn fmt_shape(shape: &[usize]) -> String {
    let inner: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", inner.join(", "))
}
