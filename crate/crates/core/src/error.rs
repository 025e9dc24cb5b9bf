use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or parameter shapes that cannot be combined.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value outside its documented domain (labels, depths, class counts, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A dataset file whose contents do not follow the expected layout.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A binary weight or checkpoint file that failed to decode.
    #[error("parse error at byte offset {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// API misuse, such as back-propagating through a cache the model has outlived.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A failure inside one fold of a cross-validation run.
    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
