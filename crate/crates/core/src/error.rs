use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("architecture error at layer {layer}: {reason}")]
    Architecture { layer: String, reason: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("incompatible checkpoint: expected fingerprint {expected:016x}, found {found:016x}")]
    IncompatibleCheckpoint { expected: u64, found: u64 },

    #[error("training diverged at batch {batch} (epoch {epoch}): loss {loss}; recent losses {history:?}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        history: Vec<f64>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed record in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        axis: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Numeric(_) | Error::NonFiniteLoss { .. } => "numeric",
            Error::Validation(_) => "validation",
            Error::State(_) => "state",
            Error::Architecture { .. } => "architecture",
            Error::Geometry(_) => "geometry",
            Error::Format { .. } | Error::Parse { .. } => "format",
            Error::IncompatibleCheckpoint { .. } => "incompatible-checkpoint",
            Error::Io { .. } | Error::Image { .. } => "io",
        }
    }
}
