use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ComirError>;

#[derive(Debug, Error)]
pub enum ComirError {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-square image ({height}x{width}) cannot take an odd quarter-turn here")]
    NonSquare { height: usize, width: usize },

    #[error("patch footprint exceeds source bounds: {0}")]
    OutOfBounds(String),

    #[error("no valid patch placement after {retries} retries")]
    PlacementFailed { retries: usize },

    #[error("value outside [0, 1] at index {index}: {value}")]
    ValueOutOfRange { index: usize, value: f32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate critic input: {0}")]
    Degenerate(String),

    #[error("batch needs at least 2 tuples, got {0}")]
    BatchTooSmall(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("input too small: {0}")]
    InputTooSmall(String),

    #[error("dataset error for sample `{sample}`: {reason}")]
    Dataset { sample: String, reason: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("modality mismatch: checkpoint has {expected:?}, got `{got}`")]
    ModalityMismatch { expected: Vec<String>, got: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl ComirError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ComirError::Io {
            path: path.into(),
            source,
        }
    }
}
