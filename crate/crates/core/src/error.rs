use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unexpected end of file")]
    UnexpectedEof,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("image decode error: {0}")]
    Decode(String),

    #[error("zero dimension in {0}")]
    ZeroDimension(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("length mismatch: expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid soft segmentation: {0}")]
    NotOnSimplex(String),

    #[error("invalid label {label} at index {index} (classes = {classes})")]
    InvalidLabel {
        label: usize,
        index: usize,
        classes: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("class {class} has zero mass; cannot take the logarithm")]
    ZeroMass { class: usize },

    #[error("fewer distinct values than classes ({distinct} < {classes})")]
    TooFewDistinct { distinct: usize, classes: usize },

    #[error("tape mismatch: {0}")]
    TapeMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
