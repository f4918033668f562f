use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (bad schedule bounds, zero-area shapes, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("timestep {t} out of range [1, {t_max}]")]
    TimestepOutOfRange { t: usize, t_max: usize },

    /// Checkpoint was trained against a different schedule/noise spec.
    #[error("schedule fingerprint mismatch: checkpoint has {expected}, inference supplied {got}")]
    FingerprintMismatch { expected: String, got: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
