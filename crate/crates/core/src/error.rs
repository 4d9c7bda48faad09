use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("scenario validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("power-flow infeasible: {0}")]
    PowerFlowInfeasible(String),

    #[error("OFC infeasible or unbounded: {0}")]
    OfcInfeasible(String),

    #[error("numerical blow-up at t = {time} s")]
    BlowUp { time: f64 },

    #[error("control capacity mismatch between comparison cases: {case1} vs {case2}")]
    CapacityMismatch { case1: f64, case2: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical solvers (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::PowerFlowInfeasible(_)
            | Error::OfcInfeasible(_)
            | Error::BlowUp { .. }
            | Error::CapacityMismatch { .. } => true,
            Error::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
