//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed on-disk artifact (bundle file, upload file, checkpoint).
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    /// Inconsistent shapes or values between in-memory structures.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration (unknown key, bad value, inconsistent fields).
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure (divergence, non-finite loss or gradient).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Pipeline failure with the stage that raised it.
    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Tag an error with the pipeline stage it occurred in.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
