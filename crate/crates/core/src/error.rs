use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("graph is disconnected{0}")]
    Disconnected(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange { what: &'static str, index: usize, limit: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("divergence in {method} at epoch {epoch}, inner step {inner}: {detail}")]
    Divergence { method: String, epoch: usize, inner: usize, detail: String },

    #[error("reference solve stopped at gradient norm {grad_norm:e} after {iterations} iterations (tolerance {tol:e})")]
    SolveFailed { grad_norm: f64, iterations: usize, tol: f64 },

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("too few samples: need at least {need}, have {have}")]
    TooFewSamples { need: usize, have: usize },

    #[error("plateau not reached: {0}")]
    PlateauNotReached(String),

    #[error("inadmissible stepsize: {0}")]
    Inadmissible(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("unknown suite `{name}`; registered suites: {}", registered.join(", "))]
    UnknownSuite { name: String, registered: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn divergence(method: &str, epoch: usize, inner: usize, detail: impl Into<String>) -> Self {
        Error::Divergence { method: method.to_string(), epoch, inner, detail: detail.into() }
    }
}
