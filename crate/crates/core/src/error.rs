use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("Euler discretization unstable at Ts = {ts} s: {reason} (spectral radius {spectral_radius:.6})")]
    UnstableDiscretization {
        ts: f64,
        spectral_radius: f64,
        reason: String,
    },

    #[error("set-point {y_ref} outside the Hill output range ({lower}, {upper})")]
    SetPointOutOfRange { y_ref: f64, lower: f64, upper: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("input box too tight for disturbance bound: {0}")]
    EmptyInputSet(String),

    #[error("no admissible steady input for y_ref: {0}")]
    EmptySteadySet(String),

    #[error("disturbance bound simulation did not converge after {steps} steps (increment {residual:e})")]
    NonConvergentSimulation { steps: usize, residual: f64 },

    #[error("Riccati iteration did not converge after {iterations} iterations (step {step:e})")]
    RiccatiNonConvergence { iterations: usize, step: f64 },

    #[error("(Q^1/2, A) is not observable")]
    NotObservable,

    #[error("(A, B) is not controllable")]
    NotControllable,

    #[error("finite determination failed; check λ < 1 ({0})")]
    FiniteDetermination(String),

    #[error("infeasible set: {0}")]
    InfeasibleSet(String),

    #[error("LP iteration limit reached after {0} pivots")]
    LpIterationLimit(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("MPC problem infeasible at step {step}: {report}")]
    Infeasible { step: usize, report: String },

    #[error("QP solver stopped without convergence at step {step}: {report}")]
    SolverFailure { step: usize, report: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
