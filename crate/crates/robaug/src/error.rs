//! Error type shared across the toolkit.
//!
//! Variants map onto the CLI exit codes: configuration and data-shape
//! problems exit 2, backend failures exit 3, filesystem and codec
//! failures exit 4.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or request parameters.
    #[error("config error: {0}")]
    Config(String),

    /// On-disk data that does not match the expected layout or schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// In-memory data that violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A segmentation or generation backend failed or is unreachable.
    #[error("backend error ({endpoint}): {message}")]
    Backend { endpoint: String, message: String },

    /// A backend answered, but the response violates the wire contract.
    #[error("protocol error ({endpoint}): {message}")]
    Protocol { endpoint: String, message: String },

    /// Filesystem failure.
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Image encode or decode failure.
    #[error("image error at {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn backend(endpoint: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Backend {
            endpoint: endpoint.into(),
            message: message.into(),
        }
    }

    pub fn protocol(endpoint: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Protocol {
            endpoint: endpoint.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn image(path: impl AsRef<Path>, message: impl ToString) -> Self {
        Error::Image {
            path: path.as_ref().to_path_buf(),
            message: message.to_string(),
        }
    }

    /// Process exit code for the CLI: 2 config/schema, 3 backend, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema(_) | Error::Validation(_) => 2,
            Error::Backend { .. } | Error::Protocol { .. } => 3,
            Error::Io { .. } | Error::Image { .. } => 4,
        }
    }
}
