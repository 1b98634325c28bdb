use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("non-finite value in point {index}")]
    NonFinitePoint { index: usize },

    #[error("line {line}: timestamps not strictly increasing ({prev} then {stamp})")]
    NonMonotonicStamps { line: usize, prev: f64, stamp: f64 },

    #[error("line {line}: quaternion norm {norm} is not close to 1")]
    BadQuaternion { line: usize, norm: f64 },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("cell index ({u}, {v}) outside grid of size {size}")]
    CellIndex { u: usize, v: usize, size: usize },

    #[error("slope state misaligned with grid: {0}")]
    Misaligned(String),

    #[error("unsupported descriptor dimension {0} (expected 128)")]
    UnsupportedDescriptor(usize),

    #[error("resolution mismatch: expected {expected} m/px, got {actual} m/px")]
    ResolutionMismatch { expected: f64, actual: f64 },

    #[error("map accumulator is empty")]
    EmptyAccumulator,

    #[error("unsupported compression code {0}")]
    UnsupportedCompression(u16),

    #[error("file is not georeferenced: missing {0}")]
    NotGeoreferenced(&'static str),

    #[error("unsupported tiff layout: {0}")]
    UnsupportedTiff(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing frames: {0:?}")]
    MissingFrames(Vec<PathBuf>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
