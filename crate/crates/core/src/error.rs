use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A numeric precondition failed (non-positive depth, NaN input, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs violate an operation's contract (shape mismatch, unnormalized map, bad label).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file on disk is malformed, truncated, or from an incompatible version.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Training produced a non-finite loss.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

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

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Domain(_) => 2,
            _ => 1,
        }
    }
}
