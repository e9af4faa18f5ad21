use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest field `{field}`: {message}")]
    Manifest { field: String, message: String },

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument `{name}`: {message}")]
    InvalidArgument { name: String, message: String },

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid splits: {0}")]
    Splits(String),

    #[error("attribute row for class {class} is all zeros")]
    ZeroAttributeRow { class: usize },

    #[error("class {class} has no examples")]
    EmptyClass { class: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("trace does not match inputs: {0}")]
    TraceMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(field: &str, message: impl Into<String>) -> Self {
        Error::Manifest {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(name: &str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name: name.to_string(),
            message: message.into(),
        }
    }
}
