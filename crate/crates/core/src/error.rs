use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParam { name: &'static str, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in layer {layer} at t={t}")]
    NonFinite { layer: usize, t: usize },

    #[error("scheduling buffer too short: offset {offset} needs more than {len} slots")]
    BufferTooShort { offset: usize, len: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("delay statistics need at least one delay")]
    EmptyDelays,

    #[error("model container: {0}")]
    Model(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        message: message.into(),
    }
}
