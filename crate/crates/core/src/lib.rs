//! Regularized evolution inclusions `ż ∈ A(Rℓ − Qz)` with a maximal monotone
//! `A`: forward solvers, exact discrete sensitivities, reduced optimal control
//! and the algebraic reduction of homogenized plasticity.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod evolution;
pub mod flow_rule;
pub mod homogenized;
pub mod linalg;
pub mod objective;
pub mod presets;
pub mod sensitivity;
pub mod smoothing;
pub mod trajectory;

pub use control::{continuation, optimize, riesz_h1, ssc_verify, OptimizeOptions, OptimizeReport, RegSchedule};
pub use error::{Error, Result};
pub use flow_rule::{FlowRule, RegParams};
pub use linalg::{LinearMap, SymPosDefMap, Vector};
pub use evolution::{integrate_reference, integrate_smoothed, integrate_yosida, ProblemData};
pub use objective::{evaluate_objective, Objective, ObjectiveSpec, Observation};
pub use sensitivity::{reduced_gradient, Linearization};
pub use trajectory::{TimeGrid, Trajectory};
