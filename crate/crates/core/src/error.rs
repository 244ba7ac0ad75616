use std::path::PathBuf;

use plc_autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, PlcError>;

#[derive(Debug, Error)]
pub enum PlcError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown config key `{key}`")]
    UnknownConfigKey { key: String },

    #[error("config key `{key}`: {detail}")]
    BadConfigValue { key: String, detail: String },

    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PlcError {
    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Self::InvalidInput(detail.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        Self::Format {
            path: path.into(),
            detail: detail.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
