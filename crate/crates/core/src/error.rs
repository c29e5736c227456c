use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mode {mode} for tensor of order {order}")]
    InvalidMode { mode: usize, order: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("eigensolver failed to converge after {iterations} sweeps")]
    Convergence { iterations: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Convergence { .. } | Error::NonFinite(_) | Error::Divergence { .. }
        )
    }
}
