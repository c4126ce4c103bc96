use std::path::PathBuf;

/// Errors produced by every fallible operation in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("signal too short: need at least {needed} samples, got {got}")]
    Length { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("overlap-add normalization failed: {0}")]
    Normalization(String),

    #[error("numerical failure at tau={tau:.6} (sigma={sigma:.6e}): {what}")]
    Numerical { tau: f64, sigma: f64, what: String },

    #[error("training diverged at step {step}: {what}")]
    Divergence { step: u64, what: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{kind} format error: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error("checkpoint architecture mismatch: expected `{expected}`, found `{found}`")]
    Architecture { expected: String, found: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
