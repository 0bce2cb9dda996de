use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("covariance factorization failed for {n} points (jitter up to {max_jitter:e}): {detail}")]
    Factorization {
        n: usize,
        max_jitter: f64,
        detail: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("rough integral did not converge: {0}")]
    Convergence(String),

    #[error("solution blew up at time {time}")]
    BlowUp { time: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("samples are degenerate (atom at {value}); no density to estimate")]
    Atom { value: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
