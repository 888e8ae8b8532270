use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("embedding backend `{backend}` failed: {cause}")]
    Backend { backend: String, cause: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite training loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("could not parse annotation response: {raw:?}")]
    UnparseableResponse { raw: String },

    #[error("provider `{provider}` rejected credentials: {detail}")]
    Auth { provider: String, detail: String },

    #[error("provider `{provider}` timed out after {attempts} attempts")]
    Timeout { provider: String, attempts: u32 },

    #[error("provider `{provider}` request failed: {detail}")]
    Provider { provider: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse failure class used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Auth { .. } => ErrorKind::Config,
            Error::InvalidInput(_)
            | Error::Schema(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::Json(_) => ErrorKind::Data,
            Error::Backend { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NonFinite(_)
            | Error::Tensor(_)
            | Error::UnparseableResponse { .. }
            | Error::Timeout { .. }
            | Error::Provider { .. } => ErrorKind::Compute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Compute,
}
