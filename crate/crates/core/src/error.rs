use std::path::PathBuf;

/// Errors produced anywhere in the outpainting stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: u32, num_classes: usize },

    #[error("segmentation failed: {0}")]
    SegmentationFailed(String),

    #[error("checkpoint does not match network spec (expected fingerprint {expected}, found {found})")]
    CheckpointMismatch { expected: String, found: String },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("non-finite loss at step {step}: {components}")]
    NonFiniteLoss { step: u64, components: String },

    #[error("matrix square root did not converge: {0}")]
    NotConverged(String),

    #[error("malformed config: {0}")]
    Config(String),

    #[error("malformed manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
