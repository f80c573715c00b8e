use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {0}")]
    NonFinite(f64),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("image is empty")]
    EmptyImage,

    #[error("degenerate luminance: image mean is zero")]
    DegenerateLuminance,

    #[error("no images supplied")]
    NoImages,

    #[error("image is not square ({width}x{height})")]
    NotSquare { width: usize, height: usize },

    #[error("image side {side} is smaller than {required} required by the extractor")]
    ImageTooSmall { side: usize, required: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid feature map: {0}")]
    InvalidFeatureMap(String),

    #[error("not a feature map file: {path}")]
    BadMagic { path: PathBuf },

    #[error("unsupported feature map version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u16 },

    #[error("truncated feature map file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in feature map file {path} at element {index}")]
    NonFinitePayload { path: PathBuf, index: usize },

    #[error("cannot parse partition strategy: malformed token {token:?}")]
    ParseStrategy { token: String },

    #[error("partition finer than feature map: {parts} parts over {height}x{width} cells")]
    PartitionTooFine {
        parts: usize,
        height: usize,
        width: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("zero-norm embedding for {id}")]
    ZeroVector { id: String },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("empty gallery")]
    EmptyGallery,

    #[error("no evaluable queries")]
    NoEvaluableQueries,

    #[error("invalid K {0}: must be at least 1")]
    InvalidK(usize),

    #[error("malformed record at {path}:{line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing dataset root {0}")]
    MissingRoot(PathBuf),

    #[error("{context}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error for {path}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
