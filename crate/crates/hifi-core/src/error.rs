use thiserror::Error;

/// Errors produced by the hifi-core library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An invalid configuration value (bad kernel size, bad hyperparameter,
    /// unknown config key, ...).
    #[error("config error: {0}")]
    Config(String),

    /// The caller violated an API contract (non-scalar loss, empty dataset, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value showed up where the pipeline requires finite math.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Weight archive is malformed or inconsistent.
    #[error("weight archive error: {0}")]
    Archive(String),

    /// Image decode/encode failure.
    #[error("image error: {0}")]
    Image(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
