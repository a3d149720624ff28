use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value at batch index {index} in {context}")]
    NonFinite { context: &'static str, index: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error in {path:?}: {message}")]
    Format { path: Option<PathBuf>, message: String },

    #[error("input vector {index} is not unit-norm (norm {norm})")]
    NotNormalized { index: usize, norm: f64 },

    #[error("representation collapse: embedding std {std:e} below threshold for {steps} consecutive steps")]
    Collapse { std: f64, steps: usize },

    #[error("zero column {column} in joint estimate with alpha = 0; use alpha > 0")]
    ZeroColumn { column: usize },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("all {0} trials failed")]
    AllTrialsFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn format(path: Option<&std::path::Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.map(|p| p.to_path_buf()),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
