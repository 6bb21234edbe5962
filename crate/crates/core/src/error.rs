use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("malformed PLY header: {0}")]
    PlyHeader(String),

    #[error("PLY payload truncated: expected {expected} bytes, found {actual}")]
    PlyTruncated { expected: usize, actual: usize },

    #[error("PLY is missing required property `{0}`")]
    PlyMissingProperty(String),

    #[error("bad .flo file {path}: {reason}")]
    Flo { path: PathBuf, reason: String },

    #[error("bad PFM file {path}: {reason}")]
    Pfm { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("missing file: {0}")]
    Missing(PathBuf),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
