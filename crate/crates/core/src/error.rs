use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("gradient of parameter group `{group}` became non-finite at epoch {epoch}")]
    NonFiniteGradient { group: String, epoch: usize },

    #[error(transparent)]
    Flo(#[from] FloError),

    #[error(transparent)]
    Clip(#[from] ClipError),

    #[error("image format: {0}")]
    Image(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("average precision undefined: category has no positive samples")]
    UndefinedAp,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Parse failures for `.flo` streams.
#[derive(Debug, Error)]
pub enum FloError {
    #[error("bad .flo magic {0} (expected 202021.25)")]
    BadMagic(f32),
    #[error("truncated .flo stream: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("non-positive .flo dimensions {width}x{height}")]
    BadDimensions { width: i32, height: i32 },
    #[error("non-finite flow value")]
    NonFinite,
}

/// Failures while loading a clip directory.
#[derive(Debug, Error)]
pub enum ClipError {
    #[error("clip {0}: fewer than 2 frames")]
    TooFewFrames(PathBuf),
    #[error("clip {path}: frame {frame} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    MixedDimensions {
        path: PathBuf,
        frame: String,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("clip {0}: missing label.txt")]
    MissingLabel(PathBuf),
    #[error("clip {path}: bad label {text:?}")]
    BadLabel { path: PathBuf, text: String },
}
