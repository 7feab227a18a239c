use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, network and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scenario generation failed after {attempts} attempts")]
    ScenarioGeneration { attempts: usize },

    #[error("non-finite numeric input: {0}")]
    NumericInput(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("gate decomposition is undefined (all deviations are zero)")]
    DegenerateDecomposition,

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

/// Checkpoint decoding failures. Each variant maps to a stable numeric code.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CheckpointError {
    pub fn code(&self) -> u32 {
        match self {
            CheckpointError::BadMagic => 10,
            CheckpointError::VersionMismatch { .. } => 11,
            CheckpointError::ShapeMismatch(_) => 12,
            CheckpointError::Corrupt(_) => 13,
            CheckpointError::Io(_) => 14,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
