use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("iteration limit reached after {iterations} iterations (residual {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("teacher pretraining failed: {0}")]
    Pretrain(String),

    #[error("posterior table error: {0}")]
    Table(String),

    #[error("the le approach needs a scene posterior table")]
    MissingPosteriors,

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Stable upper-case tag used by the command line for machine-parsable errors.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Shape(_) => "SHAPE",
            Error::Numeric(_) => "NUMERIC",
            Error::Contract(_) => "CONTRACT",
            Error::Domain(_) => "DOMAIN",
            Error::Degenerate(_) => "DEGENERATE",
            Error::IterationLimit { .. } => "ITERATION_LIMIT",
            Error::Input(_) => "INPUT",
            Error::Range(_) => "RANGE",
            Error::State(_) => "STATE",
            Error::Config(_) => "CONFIG",
            Error::Split(_) => "SPLIT",
            Error::Generation(_) => "GENERATION",
            Error::Pretrain(_) => "PRETRAIN_FAILED",
            Error::Table(_) => "TABLE",
            Error::MissingPosteriors => "MISSING_POSTERIORS",
            Error::Format { .. } => "FORMAT",
            Error::Io { .. } => "IO",
        }
    }
}
