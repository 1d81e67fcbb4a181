use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("need at least {required} points, got {actual}")]
    InsufficientPoints { required: usize, actual: usize },

    #[error("point cloud is missing {0}")]
    MissingAttribute(&'static str),

    #[error("degenerate correspondences: {0}")]
    DegenerateCorrespondences(String),

    #[error("fitness is undefined for an empty source cloud")]
    EmptySource,

    #[error("invalid key: {0:?}")]
    InvalidKey(String),

    #[error("no candidates to select from")]
    NoCandidates,

    #[error("unknown task key {0:?}")]
    UnknownKey(String),

    #[error("low-confidence {key}: average fitness {average:.4} below threshold {threshold} (s_a {s_a:.4}, s_b {s_b:.4})")]
    LowConfidence {
        key: String,
        s_a: f64,
        s_b: f64,
        average: f64,
        threshold: f64,
    },

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
