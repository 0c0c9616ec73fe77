use thiserror::Error;

/// Errors raised by the kernels, solvers and harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller passed arguments that do not fit together (dimension mismatch, empty trace, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite or otherwise invalid numeric input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A solver or experiment parameter is outside its admissible range.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: &'static str, message: String },

    /// Power iteration did not settle within the iteration budget.
    #[error("lipschitz estimation did not converge after {iterations} iterations (last estimate {last_estimate})")]
    Estimation { iterations: usize, last_estimate: f64 },

    /// Invalid experiment description (e.g. more spikes than coordinates).
    #[error("specification error in `{field}`: {message}")]
    Specification { field: &'static str, message: String },

    /// An iterate or objective value stopped being finite.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config { field, message: message.into() }
    }

    pub(crate) fn spec(field: &'static str, message: impl Into<String>) -> Self {
        Error::Specification { field, message: message.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
