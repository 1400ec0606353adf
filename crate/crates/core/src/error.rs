use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("invalid architecture {arch}: {reason}")]
    InvalidArchitecture { arch: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("undefined similarity: {0}")]
    ZeroVector(String),

    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
