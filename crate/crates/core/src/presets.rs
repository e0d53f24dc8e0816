//! The shipped von Mises instance and its default load and objective.
//!
//! Three-dimensional strains at two material points give 18 internal
//! variables; eight displacement DOFs, three of them macroscopic and loaded.

use std::f64::consts::PI;

use crate::error::Result;
use crate::evolution::ProblemData;
use crate::flow_rule::FlowRule;
use crate::homogenized::{assemble, make_toy_instance, AssembledOperators, PlasticityData, ToySizes};
use crate::linalg::Vector;
use crate::objective::{Objective, ObjectiveSpec};
use crate::trajectory::{TimeGrid, Trajectory};

pub const SEED: u64 = 2024;
pub const DIM: usize = 3;
pub const POINTS: usize = 2;
pub const DISPLACEMENT_DOFS: usize = 8;
pub const MACRO_DOFS: usize = 3;
pub const LOAD_DOFS: usize = 3;
pub const C_FLOOR: f64 = 1.0;
pub const B_FLOOR: f64 = 0.5;
pub const YIELD_STRESS: f64 = 0.25;
/// Peak of the default load `ℓ(t) = A sin(πt/T)·d`.
pub const LOAD_AMPLITUDE: f64 = 2.0;
const LOAD_DIRECTION: [f64; LOAD_DOFS] = [1.0, -0.6, 0.35];

pub fn sizes() -> ToySizes {
    ToySizes::von_mises(DIM, POINTS, DISPLACEMENT_DOFS, MACRO_DOFS, LOAD_DOFS)
}

/// Data, assembled operators and evolution problem of one instance.
#[derive(Clone, Debug)]
pub struct VonMisesInstance {
    pub data: PlasticityData,
    pub ops: AssembledOperators,
    pub problem: ProblemData,
}

impl VonMisesInstance {
    pub fn from_data(data: PlasticityData, yield_stress: f64) -> Result<Self> {
        let ops = assemble(&data)?;
        let m = data.internal_dofs();
        let rule = match data.block_dim {
            Some(d) => FlowRule::von_mises(yield_stress, d, data.points)?,
            None => FlowRule::von_mises(yield_stress, m.isqrt(), 1)?,
        };
        let problem = ProblemData::new(ops.q.clone(), ops.r.clone(), Vector::zeros(m), rule)?;
        Ok(Self { data, ops, problem })
    }

    pub fn shipped() -> Result<Self> {
        Self::seeded(SEED)
    }

    pub fn seeded(seed: u64) -> Result<Self> {
        Self::from_data(make_toy_instance(seed, sizes(), C_FLOOR, B_FLOOR)?, YIELD_STRESS)
    }

    /// Tracking objective with targets taken from the response to a scaled
    /// copy of the default load.
    pub fn objective(&self, alpha: f64, beta: f64, gamma: f64) -> Result<Objective> {
        let obs = self.ops.observation(&self.data)?;
        let target_load = Vector::from_row_slice(&LOAD_DIRECTION) * (0.6 * LOAD_AMPLITUDE);
        let z = Vector::zeros(self.data.internal_dofs());
        let spec = ObjectiveSpec {
            alpha,
            beta,
            gamma,
            u_target: obs.displacement(&z, &target_load).as_slice().to_vec(),
            sigma_target: obs.stress(&z, &target_load).as_slice().to_vec(),
        };
        Objective::new(spec, obs)
    }

    pub fn default_objective(&self) -> Result<Objective> {
        self.objective(1.0, 0.1, 1e-2)
    }
}

/// `ℓ(t) = amplitude · sin(πt/T) · d` for a fixed direction `d`.
pub fn sine_load(grid: TimeGrid, amplitude: f64) -> Trajectory {
    let dir = Vector::from_row_slice(&LOAD_DIRECTION);
    let t_end = grid.final_time;
    let mut load = Trajectory::from_fn(grid, |t| &dir * (amplitude * (PI * t / t_end).sin()));
    load.values_mut()[0].fill(0.0);
    load
}

pub fn default_load(grid: TimeGrid) -> Trajectory {
    sine_load(grid, LOAD_AMPLITUDE)
}
