//! Error type shared by every pipeline stage.
//!
//! Each variant belongs to one of four families (configuration, I/O, data
//! validation, numeric failure); [`Error::exit_code`] maps the family to the
//! process exit code used by the command-line driver.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("segment too short: {n_samples} samples, one analysis window needs {window}")]
    SegmentTooShort { n_samples: usize, window: usize },

    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    #[error("spectrogram is already normalized")]
    AlreadyNormalized,

    #[error("spectrogram must be normalized before {0}")]
    NotNormalized(&'static str),

    #[error("malformed spectrogram dump: {0}")]
    Dump(String),

    #[error("mask width bound {bound} exceeds axis length {len}")]
    MaskTooWide { bound: usize, len: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("input has {frames} frames, the model needs at least {minimum}")]
    InputTooShort { frames: usize, minimum: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("bad magic in {0}")]
    BadMagic(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checkpoint does not match model configuration: {0}")]
    CheckpointMismatch(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("cannot split data: {0}")]
    Split(String),

    #[error("empty {0}")]
    Empty(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 configuration, 3 I/O,
    /// 4 data validation, 5 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::NonFinite(_) => 5,
            _ => 4,
        }
    }
}
