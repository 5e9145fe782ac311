use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Inconsistent or incomplete configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A coefficient map produced a non-finite value.
    #[error("evaluation error at x={x:?}, r={r}{}: {msg}", mode.map(|k| format!(", mode {k}")).unwrap_or_default())]
    Evaluation {
        x: [f64; 2],
        r: f64,
        mode: Option<usize>,
        msg: String,
    },
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A construction failed its own postcondition.
    #[error("internal error: {0}")]
    Internal(String),
    /// A time step could not be completed.
    #[error("step {step} failed: {msg}")]
    Step { step: usize, msg: String },
    /// Malformed configuration text.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
