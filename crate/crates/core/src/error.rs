use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed annotation, manifest, or split record.
    #[error("record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("no annotation for image `{0}`")]
    MissingAnnotation(String),

    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("embedder: {0}")]
    Embedder(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },

    #[error("evaluating pair `{pair}`: {source}")]
    Pair {
        pair: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(record: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            record,
            message: message.into(),
        }
    }

    /// True when the failure is attributable to the caller's inputs rather
    /// than to a fault inside the library.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Shape(_)
            | Error::InvalidConfig(_)
            | Error::Io { .. }
            | Error::Image { .. }
            | Error::MissingAnnotation(_)
            | Error::Checkpoint { .. }
            | Error::Embedder(_)
            | Error::Json(_) => true,
            Error::Pair { source, .. } => source.is_user_error(),
            Error::NonFinite { .. } | Error::Tensor(_) | Error::Csv(_) => false,
        }
    }
}
