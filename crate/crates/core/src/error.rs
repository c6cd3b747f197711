use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {layer}: expected {expected:?}, got {got:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarBackward(Vec<usize>),

    #[error("backward already ran on this tape")]
    TapeConsumed,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parameter layout mismatch: {0}")]
    ParamMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("episode already finished; call reset first")]
    StepAfterDone,

    #[error("buffer holds {available} items, {requested} requested")]
    InsufficientData { available: usize, requested: usize },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("network: {0}")]
    Network(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            layer: layer.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
