//! Shared fixtures for the solver benchmarks in `benches/`.

use monoflow_core::presets::{default_load, VonMisesInstance};
use monoflow_core::{Objective, RegParams, Result, TimeGrid, Trajectory};

/// The shipped von Mises instance with its default load and objective on `steps` intervals of `[0, 1]`.
pub struct Workload {
    pub instance: VonMisesInstance,
    pub load: Trajectory,
    pub params: RegParams,
    pub objective: Objective,
}

impl Workload {
    pub fn new(steps: usize) -> Result<Self> {
        let instance = VonMisesInstance::shipped()?;
        let load = default_load(TimeGrid::new(1.0, steps)?);
        let objective = instance.default_objective()?;
        Ok(Self { instance, load, params: RegParams::new(0.05, 0.05)?, objective })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_builds() {
        let w = Workload::new(8).unwrap();
        assert_eq!(w.load.values().len(), 9);
    }
}
