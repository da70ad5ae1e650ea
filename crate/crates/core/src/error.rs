use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::formats::manifest::ManifestError;
use crate::formats::FormatError;
use crate::raster::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {width}x{height}: both must be at least 1")]
    InvalidDimensions { width: usize, height: usize },

    #[error("data length {actual} does not match {expected} for the declared dimensions")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("{context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: Dims,
        found: Dims,
    },

    #[error("instance mask has no set pixels")]
    EmptyMask,

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("negative similarity value {value} at index {index}; shift the field to be non-negative")]
    NegativeSimilarity { index: usize, value: f32 },

    #[error("zero-norm embedding vector")]
    ZeroNorm,

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool: 2 for I/O failures,
    /// 1 for everything else (validation).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 2,
            _ => 1,
        }
    }
}
