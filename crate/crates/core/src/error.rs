use std::io;
use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("event order error at line {line}: {msg}")]
    Order { line: usize, msg: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported platform: {0}")]
    UnsupportedPlatform(String),

    #[error("access denied: {0}")]
    Access(String),

    #[error("platform error: {0}")]
    Platform(String),

    #[error("target error: {0}")]
    Target(String),

    /// A measurement aborted mid-run. `samples` holds what each core
    /// had collected when the failing read happened.
    #[error("measurement aborted after {collected} of {expected} samples: {cause}")]
    PartialData {
        collected: usize,
        expected: usize,
        samples: Vec<(u32, Vec<u64>)>,
        cause: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
