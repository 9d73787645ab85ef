use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read directory {path}: {source}")]
    UnreadableRoot {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("JPEG encoding failed: {0}")]
    Encode(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image {width}x{height} is too small: need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("densities are defined on different grids")]
    GridMismatch,

    #[error("not enough usable reference images: found {found}, need {needed}")]
    InsufficientReference { found: usize, needed: usize },

    #[error("{context}: record {path} has no blockiness value")]
    MissingBlockiness { context: String, path: String },

    #[error("no region count for {path}")]
    MissingRegionCount { path: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("source {source_name}: {inner}")]
    Source {
        source_name: String,
        #[source]
        inner: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_source(self, name: &str) -> Self {
        Error::Source {
            source_name: name.to_string(),
            inner: Box::new(self),
        }
    }
}
