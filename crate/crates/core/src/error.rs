use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("channel count {j} outside [0, {max}]")]
    ChannelRange { j: usize, max: usize },

    #[error("scalable-layer parameters requested before the basic layer was decoded")]
    OrderingViolation,

    #[error("non-finite loss component `{component}` at step {step}")]
    NonFinite {
        component: &'static str,
        step: usize,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("corrupt entropy-coded segment at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },

    #[error("model hash mismatch: stream carries {found}, checkpoint is {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("byte budget {budget} is below the basic layer ({min_bytes} bytes minimum)")]
    Budget { budget: usize, min_bytes: usize },

    #[error("dataset at {path:?} is empty or has no usable images")]
    EmptyDataset { path: PathBuf },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
