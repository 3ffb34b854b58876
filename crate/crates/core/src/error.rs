use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The K×K Gram matrix of a composite channel is singular or too badly
    /// conditioned to invert; usually a degenerate user geometry.
    #[error("singular Gram matrix (condition estimate {condition:.3e})")]
    SingularGram { condition: f64 },

    #[error("invalid config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("training overhead {tau} exceeds coherence time {coherence}")]
    InvalidOverhead { tau: f64, coherence: f64 },

    #[error("every training block was invalid")]
    AllBlocksInvalid,

    #[error("codeword {q} failed: {source}")]
    Codeword {
        q: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trial {trial} at sweep value {sweep_value} ({scheme}) failed: {source}")]
    Trial {
        sweep_value: f64,
        scheme: String,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid experiment: {0}")]
    Experiment(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
