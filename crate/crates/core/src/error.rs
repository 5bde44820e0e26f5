use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("label {label} at pixel (row {row}, col {col}) is outside [0, {classes})")]
    PixelLabelOutOfRange {
        row: usize,
        col: usize,
        label: usize,
        classes: usize,
    },

    #[error("target label {label} is outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward: {0}")]
    Backward(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown affordance `{0}`")]
    UnknownAffordance(String),

    #[error("unknown action `{0}`")]
    UnknownAction(String),

    #[error("missing annotation: {}", .0.display())]
    MissingAnnotation(PathBuf),

    #[error("unknown label index {index} in {}", .path.display())]
    UnknownLabel { path: PathBuf, index: u8 },

    #[error("frame indices in {} are not strictly increasing: {detail}", .dir.display())]
    NonMonotonicFrames { dir: PathBuf, detail: String },

    #[error("malformed dataset entry {}: {detail}", .path.display())]
    Dataset { path: PathBuf, detail: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint is not an affseg checkpoint (bad magic bytes)")]
    CheckpointMagic,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint is truncated while reading {0}")]
    CheckpointTruncated(&'static str),

    #[error("checkpoint is incompatible: {0}")]
    CheckpointMismatch(String),

    #[error("non-finite loss in batch {batch} of epoch {epoch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {source}", .path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
