use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the refinement library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh parse error at line {line}: {message}")]
    MeshParse { line: usize, message: String },

    #[error("invalid camera pose: {0}")]
    InvalidPose(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no visible face region")]
    NoVisibleRegion,

    #[error("unsupported texture resolution {0} (expected a power of two between 2 and 8192)")]
    UnsupportedResolution(usize),

    #[error("point {index} at ({x}, {y}) lies outside the {width}x{height} image")]
    PointOutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("non-finite {term} loss ({value})")]
    NonFinite { term: &'static str, value: f64 },

    #[error("weights bundle not found at {path} (expected sha256 {checksum})")]
    MissingWeights { path: PathBuf, checksum: String },

    #[error("weights checksum mismatch for {path}: expected {expected}, found {found}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("invalid weights bundle: {0}")]
    InvalidWeights(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
