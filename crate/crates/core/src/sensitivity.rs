//! Exact derivatives of the discrete control-to-state map.
//!
//! The forward scheme is `z_k = z_{k−1} + τ A_s(y_k)`, `y_k = Rℓ_k − Qz_k`.
//! Differentiating the scheme itself (not the continuous equation) gives, with
//! `D_k = A_s'(y_k)` and `M_k = I + τ D_k Q`,
//!
//! ```text
//! linearized:   M_k η_k = η_{k−1} + τ D_k R h_k,                  η_0 = 0
//! second order: M_k ξ_k = ξ_{k−1} + τ A_s''(y_k)[w1_k, w2_k],     ξ_0 = 0
//! adjoint:      M_kᵀ φ_{k−1} = φ_k,                               φ_N = −∂Ψ/∂z
//! ```
//!
//! with `w_k = R h_k − Q η_k`. The multiplier paired with step `k` is
//! `φ_{k−1}`, so `Σ_k τ ⟨φ_{k−1}, D_k R h_k⟩ = −⟨∂Ψ/∂z, η_N⟩` holds to
//! rounding. Each `D_k` is symmetric, hence `M_kᵀ = I + τ Q D_k`.

use nalgebra::{Dyn, LU};

use crate::error::{Error, Result};
use crate::evolution::{integrate_smoothed, ProblemData};
use crate::flow_rule::RegParams;
use crate::linalg::{check_dim, LinearMap, Vector};
use crate::objective::{check_initial_control, Objective};
use crate::trajectory::Trajectory;

/// `η = S'(ℓ) h` together with its direction.
#[derive(Clone, Debug)]
pub struct LinearizedState {
    pub eta: Trajectory,
    pub direction: Trajectory,
}

/// Backward adjoint trajectory; `phi.last()` is the terminal value.
#[derive(Clone, Debug)]
pub struct AdjointState {
    pub phi: Trajectory,
}

impl AdjointState {
    pub fn terminal(&self) -> &Vector {
        self.phi.last()
    }
}

/// Forward solution with the per-step derivative data cached.
pub struct Linearization<'a> {
    pd: &'a ProblemData,
    p: RegParams,
    load: Trajectory,
    z: Trajectory,
    forces: Vec<Vector>,
    derivs: Vec<LinearMap>,
    step_lu: Vec<LU<f64, Dyn, Dyn>>,
}

impl<'a> Linearization<'a> {
    /// Runs the forward solve and linearizes around it.
    pub fn new(pd: &'a ProblemData, p: &RegParams, load: &Trajectory) -> Result<Self> {
        let z = integrate_smoothed(pd, p, load)?;
        Self::around(pd, p, load, z)
    }

    /// Linearizes around a given state trajectory `z = S(ℓ)`.
    pub fn around(pd: &'a ProblemData, p: &RegParams, load: &Trajectory, z: Trajectory) -> Result<Self> {
        if z.grid() != load.grid() {
            return Err(Error::InvalidParameter("state and control grids differ".into()));
        }
        check_dim("linearization state", pd.state_dim(), z.dim())?;
        let n = load.grid().steps;
        let tau = load.grid().step();
        let m = pd.state_dim();
        let mut forces = Vec::with_capacity(n + 1);
        let mut derivs = Vec::with_capacity(n + 1);
        let mut step_lu = Vec::with_capacity(n);
        for k in 0..=n {
            let y = pd.driving_force(load.value(k), z.value(k));
            derivs.push(pd.rule.smoothed_derivative(&y, p));
            forces.push(y);
            if k > 0 {
                let mk = LinearMap::identity(m, m) + &derivs[k] * pd.q.matrix() * tau;
                let lu = mk.lu();
                if !lu.is_invertible() {
                    return Err(Error::SingularStep { step: k });
                }
                step_lu.push(lu);
            }
        }
        Ok(Self { pd, p: *p, load: load.clone(), z, forces, derivs, step_lu })
    }

    pub fn state(&self) -> &Trajectory {
        &self.z
    }

    pub fn load(&self) -> &Trajectory {
        &self.load
    }

    fn steps(&self) -> usize {
        self.load.grid().steps
    }

    fn tau(&self) -> f64 {
        self.load.grid().step()
    }

    fn check_direction(&self, h: &Trajectory) -> Result<()> {
        if h.grid() != self.load.grid() {
            return Err(Error::InvalidParameter("direction grid differs from control grid".into()));
        }
        check_dim("direction", self.pd.control_dim(), h.dim())
    }

    fn forward_recursion(&self, source: impl Fn(usize) -> Vector) -> Result<Trajectory> {
        let mut values = Vec::with_capacity(self.steps() + 1);
        values.push(Vector::zeros(self.pd.state_dim()));
        for k in 1..=self.steps() {
            let rhs = &values[k - 1] + source(k) * self.tau();
            let next = self.step_lu[k - 1].solve(&rhs).ok_or(Error::SingularStep { step: k })?;
            values.push(next);
        }
        Trajectory::new(*self.load.grid(), values)
    }

    pub fn linearized(&self, h: &Trajectory) -> Result<LinearizedState> {
        self.check_direction(h)?;
        let eta = self.forward_recursion(|k| &self.derivs[k] * (&self.pd.r * h.value(k)))?;
        Ok(LinearizedState { eta, direction: h.clone() })
    }

    fn perturbed_force(&self, lin: &LinearizedState, k: usize) -> Vector {
        &self.pd.r * lin.direction.value(k) - self.pd.q.apply(lin.eta.value(k))
    }

    pub fn second_order(&self, lin1: &LinearizedState, lin2: &LinearizedState) -> Result<Trajectory> {
        self.forward_recursion(|k| {
            let w1 = self.perturbed_force(lin1, k);
            let w2 = self.perturbed_force(lin2, k);
            self.pd.rule.smoothed_hvp(&self.forces[k], &w1, &w2, &self.p)
        })
    }

    pub fn adjoint(&self, objective: &Objective) -> Result<AdjointState> {
        let n = self.steps();
        let m = self.pd.state_dim();
        let mut values = vec![Vector::zeros(m); n + 1];
        values[n] = -objective.terminal_grad_z(self.z.last(), self.load.last());
        for k in (1..=n).rev() {
            let mt = LinearMap::identity(m, m) + self.pd.q.matrix() * &self.derivs[k] * self.tau();
            values[k - 1] = mt.lu().solve(&values[k]).ok_or(Error::SingularStep { step: k })?;
        }
        Ok(AdjointState { phi: Trajectory::new(*self.load.grid(), values)? })
    }

    /// Euclidean representer of `F'(ℓ)` on the controls; node 0 is zero.
    pub fn gradient(&self, objective: &Objective, adjoint: &AdjointState) -> Result<Trajectory> {
        let n = self.steps();
        let tau = self.tau();
        let gamma = objective.gamma();
        let l = self.load.values();
        let rt = self.pd.r.transpose();
        let mut g = vec![Vector::zeros(self.pd.control_dim()); n + 1];
        for k in 1..=n {
            let coupling = &rt * (&self.derivs[k] * adjoint.phi.value(k - 1)) * (-tau);
            let reg = if k < n {
                (&l[k] * 2.0 - &l[k - 1] - &l[k + 1]) * (gamma / tau)
            } else {
                (&l[k] - &l[k - 1]) * (gamma / tau)
            };
            g[k] = coupling + reg;
        }
        g[n] += objective.terminal_grad_l(self.z.last(), self.load.last());
        Trajectory::new(*self.load.grid(), g)
    }

    /// `F''(ℓ)[h, h]` from one linearized solve and the adjoint.
    pub fn hessian_form(&self, objective: &Objective, adjoint: &AdjointState, h: &Trajectory) -> Result<f64> {
        let lin = self.linearized(h)?;
        let tau = self.tau();
        let curvature: f64 = (1..=self.steps())
            .map(|k| {
                let w = self.perturbed_force(&lin, k);
                tau * adjoint.phi.value(k - 1).dot(&self.pd.rule.smoothed_hvp(&self.forces[k], &w, &w, &self.p))
            })
            .sum();
        Ok(objective.terminal_hessian_form(lin.eta.last(), h.last()) + objective.gamma() * h.h1_inner(h)
            - curvature)
    }

    /// `Σ_k τ ⟨φ_{k−1}, D_k R h_k⟩`, the pairing that equals `−J'_z η`.
    pub fn adjoint_pairing(&self, adjoint: &AdjointState, h: &Trajectory) -> f64 {
        (1..=self.steps())
            .map(|k| self.tau() * adjoint.phi.value(k - 1).dot(&(&self.derivs[k] * (&self.pd.r * h.value(k)))))
            .sum()
    }
}

pub fn solve_linearized(
    pd: &ProblemData,
    p: &RegParams,
    load: &Trajectory,
    z: &Trajectory,
    h: &Trajectory,
) -> Result<LinearizedState> {
    Linearization::around(pd, p, load, z.clone())?.linearized(h)
}

#[allow(clippy::too_many_arguments)]
pub fn solve_second_order(
    pd: &ProblemData,
    p: &RegParams,
    load: &Trajectory,
    z: &Trajectory,
    lin1: &LinearizedState,
    lin2: &LinearizedState,
) -> Result<Trajectory> {
    Linearization::around(pd, p, load, z.clone())?.second_order(lin1, lin2)
}

pub fn solve_adjoint(
    pd: &ProblemData,
    p: &RegParams,
    load: &Trajectory,
    z: &Trajectory,
    objective: &Objective,
) -> Result<AdjointState> {
    Linearization::around(pd, p, load, z.clone())?.adjoint(objective)
}

pub fn reduced_gradient(pd: &ProblemData, p: &RegParams, load: &Trajectory, objective: &Objective) -> Result<Trajectory> {
    check_initial_control(load)?;
    let lin = Linearization::new(pd, p, load)?;
    let adj = lin.adjoint(objective)?;
    lin.gradient(objective, &adj)
}

pub fn hessian_quadratic_form(
    pd: &ProblemData,
    p: &RegParams,
    load: &Trajectory,
    objective: &Objective,
    h: &Trajectory,
) -> Result<f64> {
    check_initial_control(load)?;
    let lin = Linearization::new(pd, p, load)?;
    let adj = lin.adjoint(objective)?;
    lin.hessian_form(objective, &adj, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_rule::FlowRule;
    use crate::linalg::SymPosDefMap;
    use crate::objective::{Observation, ObjectiveSpec};
    use crate::trajectory::TimeGrid;

    fn scalar() -> ProblemData {
        let q = SymPosDefMap::new(LinearMap::from_element(1, 1, 2.0)).unwrap();
        ProblemData::new(q, LinearMap::identity(1, 1), Vector::from_element(1, 0.3), FlowRule::linear(1.0).unwrap())
            .unwrap()
    }

    #[test]
    fn zero_direction_gives_zero() {
        let pd = scalar();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let p = RegParams::new(0.1, 0.1).unwrap();
        let load = Trajectory::from_fn(grid, |t| Vector::from_element(1, t));
        let lin = Linearization::new(&pd, &p, &load).unwrap();
        let zero = Trajectory::zeros(grid, 1);
        let eta = lin.linearized(&zero).unwrap();
        assert_eq!(eta.eta.cnorm(), 0.0);
        let h = Trajectory::from_fn(grid, |t| Vector::from_element(1, t * t));
        let other = lin.linearized(&h).unwrap();
        assert_eq!(lin.second_order(&other, &eta).unwrap().cnorm(), 0.0);
    }

    #[test]
    fn state_independent_objective_has_zero_adjoint() {
        let pd = scalar();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let p = RegParams::new(0.1, 0.1).unwrap();
        let load = Trajectory::from_fn(grid, |t| Vector::from_element(1, t));
        let spec = ObjectiveSpec { alpha: 0.0, beta: 0.0, gamma: 1.0, u_target: vec![1.0], sigma_target: vec![] };
        let obj = Objective::new(spec, Observation::state(1, 1)).unwrap();
        let lin = Linearization::new(&pd, &p, &load).unwrap();
        assert_eq!(lin.adjoint(&obj).unwrap().phi.cnorm(), 0.0);
    }

    #[test]
    fn singular_direction_grid_rejected() {
        let pd = scalar();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let p = RegParams::new(0.1, 0.1).unwrap();
        let load = Trajectory::zeros(grid, 1);
        let lin = Linearization::new(&pd, &p, &load).unwrap();
        assert!(lin.linearized(&Trajectory::zeros(TimeGrid::new(1.0, 8).unwrap(), 1)).is_err());
        assert!(lin.linearized(&Trajectory::zeros(grid, 2)).is_err());
    }
}
