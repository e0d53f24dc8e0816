//! Tracking-type objective
//! `J(z, ℓ) = α/2 |u(T) − u_d|² + β/2 |avg Σ(T) − σ_d|² + γ/2 ‖ℓ̇‖²_{L²}`.
//!
//! Displacement and averaged stress are affine in `(z, ℓ)`; [`Observation`]
//! stores the four matrices of that map. Only the terminal node enters the
//! tracking part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{integrate_smoothed, ProblemData};
use crate::flow_rule::RegParams;
use crate::linalg::{check_dim, LinearMap, Vector};
use crate::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub u_target: Vec<f64>,
    pub sigma_target: Vec<f64>,
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::InvalidParameter("alpha and beta must be finite and >= 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter("gamma must be positive".into()));
        }
        Ok(())
    }
}

/// `u = disp_z z + disp_l ℓ`, `avg Σ = stress_z z + stress_l ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub disp_z: LinearMap,
    pub disp_l: LinearMap,
    pub stress_z: LinearMap,
    pub stress_l: LinearMap,
}

impl Observation {
    /// Observes the state itself as "displacement" and no stress; used for
    /// problems without an elasticity model behind them.
    pub fn state(state_dim: usize, control_dim: usize) -> Self {
        Self {
            disp_z: LinearMap::identity(state_dim, state_dim),
            disp_l: LinearMap::zeros(state_dim, control_dim),
            stress_z: LinearMap::zeros(0, state_dim),
            stress_l: LinearMap::zeros(0, control_dim),
        }
    }

    pub fn displacement(&self, z: &Vector, l: &Vector) -> Vector {
        &self.disp_z * z + &self.disp_l * l
    }

    pub fn stress(&self, z: &Vector, l: &Vector) -> Vector {
        &self.stress_z * z + &self.stress_l * l
    }
}

/// Objective specification together with its observation maps.
#[derive(Clone, Debug)]
pub struct Objective {
    pub spec: ObjectiveSpec,
    pub obs: Observation,
    u_d: Vector,
    sigma_d: Vector,
}

impl Objective {
    pub fn new(spec: ObjectiveSpec, obs: Observation) -> Result<Self> {
        spec.validate()?;
        check_dim("u_target", obs.disp_z.nrows(), spec.u_target.len())?;
        check_dim("sigma_target", obs.stress_z.nrows(), spec.sigma_target.len())?;
        let u_d = Vector::from_vec(spec.u_target.clone());
        let sigma_d = Vector::from_vec(spec.sigma_target.clone());
        Ok(Self { spec, obs, u_d, sigma_d })
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    pub fn depends_on_state(&self) -> bool {
        (self.spec.alpha > 0.0 && self.obs.disp_z.amax() > 0.0)
            || (self.spec.beta > 0.0 && self.obs.stress_z.nrows() > 0 && self.obs.stress_z.amax() > 0.0)
    }

    fn residuals(&self, z: &Vector, l: &Vector) -> (Vector, Vector) {
        (self.obs.displacement(z, l) - &self.u_d, self.obs.stress(z, l) - &self.sigma_d)
    }

    /// Terminal tracking part at `(z(T), ℓ(T))`.
    pub fn terminal(&self, z: &Vector, l: &Vector) -> f64 {
        let (ru, rs) = self.residuals(z, l);
        0.5 * self.spec.alpha * ru.norm_squared() + 0.5 * self.spec.beta * rs.norm_squared()
    }

    pub fn terminal_grad_z(&self, z: &Vector, l: &Vector) -> Vector {
        let (ru, rs) = self.residuals(z, l);
        self.obs.disp_z.transpose() * ru * self.spec.alpha + self.obs.stress_z.transpose() * rs * self.spec.beta
    }

    pub fn terminal_grad_l(&self, z: &Vector, l: &Vector) -> Vector {
        let (ru, rs) = self.residuals(z, l);
        self.obs.disp_l.transpose() * ru * self.spec.alpha + self.obs.stress_l.transpose() * rs * self.spec.beta
    }

    /// Second derivative of the terminal part in direction `(η, h)`.
    pub fn terminal_hessian_form(&self, eta: &Vector, h: &Vector) -> f64 {
        let du = self.obs.displacement(eta, h);
        let ds = self.obs.stress(eta, h);
        self.spec.alpha * du.norm_squared() + self.spec.beta * ds.norm_squared()
    }

    /// `γ/2 ‖ℓ̇‖²`.
    pub fn regularizer(&self, load: &Trajectory) -> f64 {
        0.5 * self.spec.gamma * load.h1_inner(load)
    }

    pub fn value_from_states(&self, z: &Trajectory, load: &Trajectory) -> f64 {
        self.terminal(z.last(), load.last()) + self.regularizer(load)
    }
}

pub(crate) fn check_initial_control(load: &Trajectory) -> Result<()> {
    if load.value(0).amax() != 0.0 {
        return Err(Error::InvalidParameter("controls must vanish at t = 0".into()));
    }
    Ok(())
}

/// Reduced objective `F(ℓ) = J(S(ℓ), ℓ)` with the smoothed state equation.
pub fn evaluate_objective(pd: &ProblemData, p: &RegParams, load: &Trajectory, objective: &Objective) -> Result<f64> {
    check_initial_control(load)?;
    let z = integrate_smoothed(pd, p, load)?;
    Ok(objective.value_from_states(&z, load))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_rule::FlowRule;
    use crate::linalg::SymPosDefMap;
    use crate::trajectory::TimeGrid;

    fn scalar_problem() -> ProblemData {
        let q = SymPosDefMap::new(LinearMap::from_element(1, 1, 2.0)).unwrap();
        ProblemData::new(q, LinearMap::identity(1, 1), Vector::zeros(1), FlowRule::linear(1.0).unwrap()).unwrap()
    }

    fn spec(alpha: f64, target: f64) -> ObjectiveSpec {
        ObjectiveSpec { alpha, beta: 0.0, gamma: 0.1, u_target: vec![target], sigma_target: vec![] }
    }

    #[test]
    fn zero_control_zero_target_is_zero() {
        let pd = scalar_problem();
        let obj = Objective::new(spec(1.0, 0.0), Observation::state(1, 1)).unwrap();
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let p = RegParams::new(0.1, 0.1).unwrap();
        assert_eq!(evaluate_objective(&pd, &p, &Trajectory::zeros(grid, 1), &obj).unwrap(), 0.0);
    }

    #[test]
    fn decoupled_regularizer_only() {
        let pd = scalar_problem();
        let obj = Objective::new(spec(0.0, 3.0), Observation::state(1, 1)).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let load = Trajectory::from_fn(grid, |t| Vector::from_element(1, t * t));
        let p = RegParams::new(0.1, 0.1).unwrap();
        let f = evaluate_objective(&pd, &p, &load, &obj).unwrap();
        assert!((f - 0.05 * load.h1seminorm().powi(2)).abs() < 1e-15);
        assert!(!obj.depends_on_state());
    }

    #[test]
    fn rejects_nonzero_initial_control_and_bad_weights() {
        let pd = scalar_problem();
        let obj = Objective::new(spec(1.0, 0.0), Observation::state(1, 1)).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let p = RegParams::new(0.1, 0.1).unwrap();
        let load = Trajectory::constant(grid, Vector::from_element(1, 1.0));
        assert!(evaluate_objective(&pd, &p, &load, &obj).is_err());
        let mut bad = spec(1.0, 0.0);
        bad.gamma = 0.0;
        assert!(Objective::new(bad, Observation::state(1, 1)).is_err());
        assert!(Objective::new(spec(1.0, 0.0), Observation::state(2, 1)).is_err());
    }

    #[test]
    fn terminal_gradients_match_differences() {
        let obs = Observation {
            disp_z: LinearMap::from_row_slice(2, 3, &[1.0, 0.5, 0.0, -0.3, 0.2, 1.0]),
            disp_l: LinearMap::from_row_slice(2, 1, &[0.4, -0.1]),
            stress_z: LinearMap::from_row_slice(1, 3, &[0.2, 0.2, -0.7]),
            stress_l: LinearMap::from_row_slice(1, 1, &[1.5]),
        };
        let spec = ObjectiveSpec { alpha: 0.7, beta: 1.3, gamma: 1.0, u_target: vec![0.1, 0.2], sigma_target: vec![-0.4] };
        let obj = Objective::new(spec, obs).unwrap();
        let z = Vector::from_vec(vec![0.3, -0.2, 0.9]);
        let l = Vector::from_vec(vec![0.5]);
        let t = 1e-6;
        for i in 0..3 {
            let mut e = Vector::zeros(3);
            e[i] = t;
            let fd = (obj.terminal(&(&z + &e), &l) - obj.terminal(&(&z - &e), &l)) / (2.0 * t);
            assert!((fd - obj.terminal_grad_z(&z, &l)[i]).abs() < 1e-8);
        }
        let e = Vector::from_element(1, t);
        let fd = (obj.terminal(&z, &(&l + &e)) - obj.terminal(&z, &(&l - &e))) / (2.0 * t);
        assert!((fd - obj.terminal_grad_l(&z, &l)[0]).abs() < 1e-8);
    }
}
