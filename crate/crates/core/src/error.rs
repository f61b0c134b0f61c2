use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on arguments or configuration was violated.
    #[error("specification error: {0}")]
    Spec(String),

    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at step {step} (last valid step: {last_valid:?})")]
    Diverged {
        step: usize,
        last_valid: Option<usize>,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// The requested operation needs data that was not recorded.
    #[error("capability error: {0}")]
    Capability(String),

    #[error("integrity error in {}: {message}", path.display())]
    Integrity { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn integrity(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// True for errors caused by invalid input rather than numerics or I/O.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Spec(_) | Error::Capability(_))
    }
}
