//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/tensor dimension mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input that makes the requested operation mathematically undefined
    /// (zero-norm rows, batches with no positives anywhere, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Invariant violation in a spec, schedule, box, or config.
    #[error("validation error: {0}")]
    Validation(String),

    /// A runtime check or assertion failed (e.g. a gradient check above
    /// tolerance). Exit code 1.
    #[error("check failed: {0}")]
    Check(String),

    /// Metric requested on inputs for which it has no defined value.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Command-line / configuration misuse.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code contract: 0 success, 1 check failure, 2 usage/config error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Degenerate(_) | Error::Check(_) => 1,
            _ => 2,
        }
    }
}
