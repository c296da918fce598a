use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DmlError {
    /// Input outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A row with zero L2 norm where a direction is required.
    #[error("domain error: row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A combinatorial or resource guard refused the request.
    #[error("guard: {0}")]
    Guard(String),
}

impl DmlError {
    pub fn domain(msg: impl Into<String>) -> Self {
        DmlError::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        DmlError::Shape(msg.into())
    }
}

pub type Result<T, E = DmlError> = std::result::Result<T, E>;
