use thiserror::Error;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure in {what}: residual estimate {residual:e}")]
    Numeric { what: String, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("coverage error: leaked mass {leak:e} exceeds tolerance {tol:e}")]
    Coverage { leak: f64, tol: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("fit degenerate: {0}")]
    FitDegenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
