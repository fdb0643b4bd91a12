use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op} produces an empty output ({detail})")]
    EmptyOutput { op: &'static str, detail: String },

    #[error("extent {extent} is not divisible by stride {stride}")]
    IndivisibleExtent { extent: usize, stride: usize },

    #[error("image extent {extent} is not divisible by label stride {stride}")]
    StrideMismatch { extent: usize, stride: usize },

    #[error("point is behind the camera (depth {depth} < near {near})")]
    BehindCamera { depth: f64, near: f64 },

    #[error("non-finite loss component `{0}`")]
    NonFinite(&'static str),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad tensor file: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
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
}
