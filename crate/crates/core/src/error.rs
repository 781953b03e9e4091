use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the clustering pipeline and its file formats.
#[derive(Debug, Error)]
pub enum NhacError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("tracklet {tracklet}: {message}")]
    Tracklet { tracklet: String, message: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: id={id_loss} triplet={triplet_loss}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        id_loss: f64,
        triplet_loss: f64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl NhacError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        NhacError::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        NhacError::InvalidConfig(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NhacError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input or configuration, as opposed
    /// to failures that happen while a run is in progress.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            NhacError::InvalidInput(_)
                | NhacError::InvalidConfig(_)
                | NhacError::Parse { .. }
                | NhacError::Tracklet { .. }
                | NhacError::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, NhacError>;
