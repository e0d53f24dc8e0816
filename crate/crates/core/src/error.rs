use thiserror::Error;

/// Errors raised by the solvers and builders in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix is not symmetric positive definite: {0}")]
    NonSpd(String),
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("singular pivot at row {index}")]
    SingularPivot { index: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("point lies outside the operator domain (distance {distance:e})")]
    OutsideDomain { distance: f64 },
    #[error("Newton iteration diverged at step {step} (residual {residual:e})")]
    NewtonDiverged { step: usize, residual: f64 },
    #[error("initial state incompatible with the load: distance to domain {distance:e}")]
    IncompatibleInitialState { distance: f64 },
    #[error("incremental subproblem diverged at step {step} (residual {residual:e})")]
    SubproblemDiverged { step: usize, residual: f64 },
    #[error("singular step matrix at step {step}")]
    SingularStep { step: usize },
    #[error("coercivity violated: minimum eigenvalue {min_eig:e} below {floor:e}")]
    CoercivityViolated { min_eig: f64, floor: f64 },
    #[error("line search failed at iteration {iteration} after {halvings} halvings")]
    LineSearchFailed { iteration: usize, halvings: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
