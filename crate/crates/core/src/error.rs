use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty reference set for nearest-neighbor query")]
    EmptyReference,
    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("optimization diverged: {0}")]
    Diverged(String),
    #[error("denoiser produced a non-finite value at step {step}")]
    NonFiniteSample { step: usize },
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
