use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ScarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ScarError {
    /// Two states or a state and a unit set disagree on shape.
    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("solver diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: u64, reason: String },

    #[error("cannot estimate contraction factor: {0}")]
    Estimation(String),

    #[error("run did not converge within {max_iters} iterations")]
    NonConvergence { max_iters: u64, trace: Vec<f64> },

    #[error("unit {unit_id} is missing from the running checkpoint")]
    Unrecoverable { unit_id: u64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint log is corrupt: {0}")]
    CorruptLog(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ScarError {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        ScarError::Structural(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        ScarError::Argument(msg.into())
    }
}
