use std::path::PathBuf;

/// Errors produced by scoring, evaluation and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Shapes do not line up (mixed dimensions, ragged rows, misaligned ids).
    #[error("structural error: {0}")]
    Structural(String),

    /// Cholesky factorization broke down at the given leading minor.
    #[error("matrix is not positive definite (leading minor {minor}, pivot {pivot:e})")]
    NotPositiveDefinite { minor: usize, pivot: f64 },

    /// A computation produced or would produce a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed record in a line-delimited input file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
