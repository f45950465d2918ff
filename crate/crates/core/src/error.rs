use thiserror::Error;

/// Errors produced by tensor ops, the model runtime and weight I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {context} at index {index} ({value})")]
    NonFinite {
        context: String,
        index: usize,
        value: f32,
    },

    #[error("weight/config mismatch for tensor `{name}`: expected shape {expected}, got {got}")]
    WeightShapeMismatch {
        name: String,
        expected: String,
        got: String,
    },

    #[error("weight tensor `{0}` missing from store")]
    WeightMissing(String),

    #[error("weight manifest corrupt: {0}")]
    WeightManifest(String),

    #[error("weight blob truncated: need {expected} bytes, file holds {got}")]
    WeightTruncated { expected: usize, got: usize },

    #[error("gradient check failed for `{parameter}`: {reason}")]
    GradCheck { parameter: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
