use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point {point:?} is not an interior grid node")]
    OutOfDomain { point: Vec<usize> },

    #[error("explicit time step {dt:e} exceeds the monotone bound {max_dt:e}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("non-monotone stencil at node {node:?}: axial weight {weight:e} on axis {axis}")]
    NonMonotone {
        node: Vec<usize>,
        axis: usize,
        weight: f64,
    },

    #[error("{solver} did not converge in {} iterations (last residual {:e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    NonConvergence {
        solver: &'static str,
        residuals: Vec<f64>,
    },

    #[error("unknown problem `{name}`; available: {}", available.join(", "))]
    UnknownProblem {
        name: String,
        available: Vec<&'static str>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
