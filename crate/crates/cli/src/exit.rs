//! Process exit codes. Each failure path has its own code.

use std::process::ExitCode;

use monoflow_core::Error;

pub const OK: u8 = 0;
/// A check ran to completion and failed.
pub const CHECK_FAILED: u8 = 1;
/// Unreadable, invalid or inconsistent configuration or input data.
pub const CONFIG_ERROR: u8 = 2;
/// A solver failed: Newton divergence, singular step matrix and the like.
pub const SOLVER_FAILURE: u8 = 3;
/// Output files could not be written.
pub const OUTPUT_ERROR: u8 = 4;
/// The optimizer's line search exhausted its halvings.
pub const LINE_SEARCH_FAILED: u8 = 5;
/// The optimizer hit its iteration cap.
pub const MAX_ITERATIONS: u8 = 6;
/// Bad command-line arguments or `MONOFLOW_LOG` value.
pub const USAGE_ERROR: u8 = 64;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("line search failed: {0}")]
    LineSearch(String),
    #[error("iteration cap reached: {0}")]
    MaxIterations(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn config(e: Error) -> Self {
        Self::Config(e.to_string())
    }

    /// Classifies a library error raised while running a solver.
    pub fn solver(e: Error) -> Self {
        match e {
            Error::DimensionMismatch { .. }
            | Error::InvalidParameter(_)
            | Error::NonSpd(_)
            | Error::CoercivityViolated { .. }
            | Error::IncompatibleInitialState { .. }
            | Error::Json(_) => Self::Config(e.to_string()),
            Error::Io(_) => Self::Output(e.to_string()),
            _ => Self::Solver(e.to_string()),
        }
    }

    pub fn output(e: impl std::fmt::Display) -> Self {
        Self::Output(e.to_string())
    }

    pub fn code(&self) -> u8 {
        match self {
            Self::Config(_) => CONFIG_ERROR,
            Self::Solver(_) => SOLVER_FAILURE,
            Self::Output(_) => OUTPUT_ERROR,
            Self::Check(_) => CHECK_FAILED,
            Self::LineSearch(_) => LINE_SEARCH_FAILED,
            Self::MaxIterations(_) => MAX_ITERATIONS,
            Self::Usage(_) => USAGE_ERROR,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}
