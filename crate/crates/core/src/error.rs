use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("softmax value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("agent node has no incident edges to choose from")]
    NoAction,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("search space too large: {0}")]
    SearchTooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Coarse classification used by front ends to pick an exit status.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Convergence { .. }
            | Error::DegeneratePosterior(_)
            | Error::NonFiniteGradient(_)
            | Error::Numeric(_) => ErrorCategory::Numeric,
            Error::InvalidArgument(_) => ErrorCategory::Usage,
            _ => ErrorCategory::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}
