use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("insufficient poses: need at least 2, got {0}")]
    InsufficientPoses(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point is behind camera (z = {0})")]
    BehindCamera(f64),

    #[error("unsupported splat PLY: {0}")]
    UnsupportedSplatPly(String),

    #[error("malformed {kind}: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank-deficient alignment: {0}")]
    RankDeficient(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("refiner failed: {0}")]
    Refiner(String),

    #[error("stage {stage} failed at frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { kind, msg: msg.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn at_frame(self, stage: &'static str, frame: impl Into<String>) -> Self {
        Error::Stage { stage, frame: frame.into(), source: Box::new(self) }
    }

    /// Whether the failure was caused by unreadable or malformed inputs
    /// rather than by a processing stage.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Image { .. }
            | Error::Format { .. }
            | Error::UnsupportedSplatPly(_)
            | Error::Config(_) => true,
            Error::Stage { .. } => false,
            _ => false,
        }
    }
}
