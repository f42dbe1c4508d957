//! Shared error type for container, solver and I/O operations.

use thiserror::Error;

/// Errors surfaced by the public operations of this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An index lies outside the container bounds.
    #[error("index out of range: {0}")]
    Range(String),

    /// A parameter violates its documented domain (e.g. non-positive lambda).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Iterative computation produced a non-finite objective.
    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    /// Escape step requested along a zero direction.
    #[error("degenerate escape direction: {0}")]
    DegenerateDirection(String),

    /// An operation was invoked in a state it does not support.
    #[error("misuse: {0}")]
    Misuse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (bad magic, truncated payload, unparsable field).
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
