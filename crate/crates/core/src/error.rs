use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A point lies outside the admissible region of its chart.
    #[error("domain error: {0}")]
    Domain(String),
    /// A stencil would reach past the edge of the grid.
    #[error("boundary error: {0}")]
    Boundary(String),
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    /// Quadratic momentum form is not positive definite.
    #[error("momentum form not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("ill-conditioned fit (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
