use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("numeric fault: non-finite values produced by {layer}")]
    NonFinite { layer: String },

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("point ({x}, {y}) lies outside the {width}x{height} map")]
    PointOutOfBounds { x: f64, y: f64, width: usize, height: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic: not a ROSEW weights file")]
    BadMagic,

    #[error("unsupported weights file version {found} (expected {expected})")]
    UnsupportedVersion { found: u8, expected: u8 },

    #[error("weights file truncated while reading {tensor}")]
    Truncated { tensor: String },

    #[error("weights tensor {tensor} does not match the network configuration: {detail}")]
    WeightsMismatch { tensor: String, detail: String },

    #[error("annotation record {index} ({image}): {detail}")]
    Annotation { index: usize, image: String, detail: String },

    #[error("failed to parse {path} at line {line}, column {column}: {message}")]
    Json { path: PathBuf, line: usize, column: usize, message: String },

    #[error("cannot decode image {path}: {detail}")]
    Decode { path: PathBuf, detail: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
