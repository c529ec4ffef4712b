//! Command-line entry points and the HTTP session service.

pub mod commands;
pub mod config;
pub mod service;
pub mod store;

use std::path::PathBuf;

use outpaint::layout_data::{Pixels, SemanticLayout};
use sha2::{Digest, Sha256};

/// Exit status of the `outpaint` binary for each failure class.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CHECKPOINT: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const DATASET: i32 = 5;
    pub const TRAINING_DIVERGED: i32 = 6;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error(transparent)]
    Core(#[from] outpaint::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("session store: {0}")]
    Store(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use outpaint::Error as E;
        match self {
            CliError::MissingCheckpoint(_) => exit::CHECKPOINT,
            CliError::Core(E::MalformedCheckpoint(_) | E::CheckpointMismatch { .. }) => exit::CHECKPOINT,
            CliError::Core(E::Config(_)) => exit::CONFIG,
            CliError::Core(E::DatasetNotFound(_) | E::Manifest { .. }) => exit::DATASET,
            CliError::Core(E::NonFiniteLoss { .. }) => exit::TRAINING_DIVERGED,
            _ => exit::OTHER,
        }
    }
}

/// Hex SHA-256 of an image's 8-bit RGB raster and its size.
pub fn image_hash(pixels: &Pixels) -> String {
    let rgb = pixels.to_rgb8();
    let mut h = Sha256::new();
    h.update(format!("rgb8:{}x{}:", rgb.width(), rgb.height()).as_bytes());
    h.update(rgb.as_raw());
    hex::encode(h.finalize())
}

/// Hex SHA-256 of a label raster, its size and class count.
pub fn layout_hash(layout: &SemanticLayout) -> String {
    let mut h = Sha256::new();
    h.update(format!("labels:{}x{}:{}:", layout.width(), layout.height(), layout.num_classes()).as_bytes());
    for l in layout.labels() {
        h.update(l.to_le_bytes());
    }
    hex::encode(h.finalize())
}
