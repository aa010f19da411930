use std::path::PathBuf;

/// Errors produced anywhere in the configurator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("layer {layer}: {message}")]
    Structural { layer: usize, message: String },

    #[error("invalid value for `{field}`: {message}")]
    InvalidField { field: String, message: String },

    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("search space exhausted")]
    Exhausted,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn field(field: &str, msg: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.to_string(),
            message: msg.into(),
        }
    }

    pub(crate) fn structural(layer: usize, msg: impl Into<String>) -> Self {
        Error::Structural {
            layer,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn from_json(path: impl Into<PathBuf>, err: serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
