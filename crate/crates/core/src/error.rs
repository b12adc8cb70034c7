use thiserror::Error;

/// Errors raised by the simulator, the design solvers and the estimators.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Solver {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parameter(_) | Error::Io(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
