use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("render error: {0}")]
    Render(String),
    #[error("comparison error: {0}")]
    Comparison(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for command-line front ends: 1 for configuration
    /// problems, 2 for data and I/O problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Comparison(_) => 1,
            Error::Data(_)
            | Error::Schema(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Render(_) => 2,
            Error::Tensor(TensorError::Contract(_)) => 1,
            Error::Tensor(_) | Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
