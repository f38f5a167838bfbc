use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("codec error in {path}: {msg}")]
    Codec { path: PathBuf, msg: String },

    #[error("response curve `{curve}`: {msg}")]
    Dorf { curve: String, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step} (batch indices {batch:?}): {detail}")]
    NonFinite {
        step: u64,
        batch: Vec<usize>,
        detail: String,
    },

    #[error("unknown feature stage `{requested}`; available stages: {available:?}")]
    UnknownStage {
        requested: String,
        available: Vec<String>,
    },

    #[error("exposure values differ: predicted {pred:?}, reference {reference:?}")]
    EvMismatch { pred: Vec<f64>, reference: Vec<f64> },

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn codec(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Codec {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Codec { .. } => "codec",
            Error::Dorf { .. } => "dorf",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Invalid(_) => "invalid",
            Error::Manifest(_) => "manifest",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFinite { .. } => "non_finite",
            Error::UnknownStage { .. } => "unknown_stage",
            Error::EvMismatch { .. } => "ev_mismatch",
            Error::Empty(_) => "empty",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
