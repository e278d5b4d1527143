use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("cannot decode image {}: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("image has zero area: {}", .0.display())]
    ZeroArea(PathBuf),

    #[error("malformed manifest {}: {reason}", path.display())]
    Manifest { path: PathBuf, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: String, expected: u32 },

    #[error("checkpoint criterion `{found}` does not match configured `{expected}`; the main network must be retrained")]
    CriterionMismatch { found: String, expected: String },

    #[error("corrupted checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("missing prerequisite checkpoint for stage `{0}`")]
    MissingPrerequisite(String),

    #[error("parameter `{0}` is frozen and cannot be trained")]
    FrozenParameter(String),

    #[error("non-finite gradient for `{0}`; step aborted")]
    NonFiniteGradient(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
