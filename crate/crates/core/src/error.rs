use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("degenerate warp: {0}")]
    DegenerateWarp(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("dataset integrity error: missing {missing:?}")]
    Integrity { missing: Vec<String> },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the command line: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Numeric(_) | Error::Dimension(_) | Error::Internal(_) => 3,
            Error::DegenerateWarp(_)
            | Error::Metric(_)
            | Error::Format { .. }
            | Error::Integrity { .. }
            | Error::Image(_)
            | Error::Io(_) => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
