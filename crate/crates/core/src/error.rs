use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the model kernels, solvers and experiment runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    /// Some `dt (x_j - r) gamma + 1 + dt r` is non-positive on the feasible gamma range.
    #[error("degenerate return history: {0}")]
    DegenerateHistory(String),

    #[error("market clearance failed: {0}")]
    ClearanceFailure(String),

    #[error("bankruptcy: wealth {wealth} (agent {agent:?})")]
    Bankruptcy { agent: Option<usize>, wealth: f64 },

    #[error("singular mean-field coefficient: {0}")]
    SingularCoefficient(String),

    #[error("CFL condition violated: dt = {dt}, limit = {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("did not converge: {0}")]
    ConvergenceFailure(String),

    /// An error from inside an LLS run, tagged with the step it occurred at.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

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
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping step annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
