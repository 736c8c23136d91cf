use bevrep_autodiff::{AutodiffError, CheckpointError};
use thiserror::Error;

/// Errors surfaced by the pipeline. Each variant maps onto a CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("simulation error: {0}")]
    Sim(String),
    #[error("render error: {0}")]
    Render(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("training diverged at epoch {epoch}: {what}")]
    Divergence { epoch: usize, what: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 config, 3 numeric divergence, 4 data, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Data(_) | Error::Checkpoint(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
