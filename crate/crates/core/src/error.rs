use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("manifest missing or unreadable: {path}")]
    MissingManifest { path: PathBuf },
    #[error("no mask found for image {image}")]
    MissingMask { image: PathBuf },
    #[error("mask value {value} out of range for {num_classes} classes ({context})")]
    MaskValueOutOfRange {
        value: u32,
        num_classes: usize,
        context: String,
    },
    #[error("dimension mismatch in {context}: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        context: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("sequence too short to fuse: {len} frames, need at least 3")]
    SequenceTooShort { len: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in network input")]
    NonFiniteInput,
    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    CheckpointVersion { expected: u32, found: u32 },
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),
    #[error("no suspicious class present in ground truth")]
    NoSuspiciousClass,
    #[error("iou threshold {0} must lie strictly inside (0, 1)")]
    InvalidIouThreshold(f64),
}
