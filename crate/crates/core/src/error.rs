use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite simulation state in `{field}`")]
    NonFinite { field: &'static str },

    #[error("gait {0:?} has no reference contact pattern")]
    NoContactPattern(crate::gait::GaitType),

    #[error("invalid switch criteria x1={x1}, x2={x2}: need 0 <= x1 < x2 <= 15")]
    InvalidCriteria { x1: f64, x2: f64 },

    #[error("all composition weights are zero")]
    ZeroWeights,

    #[error("replay buffer holds {size} transitions, batch needs {batch}")]
    BufferUnderfull { size: usize, batch: usize },

    #[error("expected {expected} evaluations, got {actual}")]
    EvaluationCount { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
