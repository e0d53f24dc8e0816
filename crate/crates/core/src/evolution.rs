//! Forward solvers for `ż ∈ A(Rℓ − Qz)`, `z(0) = z₀`.
//!
//! All schemes are implicit Euler on the uniform grid of the load. The
//! regularized fields (smoothed or plain Yosida) are Lipschitz and each step is
//! a nonlinear equation solved by damped (semismooth) Newton. The reference
//! solver works with the unregularized operator through the variable
//! `q = Rℓ − Qz`, so each step is a resolvent problem in the `Q⁻¹` metric.

use log::debug;

use crate::error::{Error, Result};
use crate::flow_rule::{FlowRule, RegParams, DOMAIN_TOL};
use crate::linalg::{check_dim, solve_general, LinearMap, SymPosDefMap, Vector};
use crate::trajectory::Trajectory;

pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_MAX_HALVINGS: usize = 30;
pub const NEWTON_RTOL: f64 = 1e-11;
const FIXED_POINT_MAX_ITER: usize = 200_000;

/// One evolution problem: `Q`, `R`, `z₀`, the coercivity constant `γ_Q` and
/// the flow rule `A`.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub q: SymPosDefMap,
    pub r: LinearMap,
    pub z0: Vector,
    pub gamma_q: f64,
    pub rule: FlowRule,
}

impl ProblemData {
    /// Builds the problem with `γ_Q` set to the smallest eigenvalue of `Q`.
    pub fn new(q: SymPosDefMap, r: LinearMap, z0: Vector, rule: FlowRule) -> Result<Self> {
        let gamma_q = q.min_eig_estimate()?;
        Self::with_gamma(q, r, z0, gamma_q, rule)
    }

    pub fn with_gamma(q: SymPosDefMap, r: LinearMap, z0: Vector, gamma_q: f64, rule: FlowRule) -> Result<Self> {
        let m = q.dim();
        check_dim("ProblemData (R rows)", m, r.nrows())?;
        check_dim("ProblemData (z0)", m, z0.len())?;
        if let Some(dim) = rule.space_dim() {
            check_dim("ProblemData (flow rule)", m, dim)?;
        }
        rule.validate()?;
        let min_eig = q.min_eig_estimate()?;
        if !(gamma_q > 0.0) || gamma_q > min_eig * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "gamma_Q = {gamma_q} must lie in (0, {min_eig}]"
            )));
        }
        Ok(Self { q, r, z0, gamma_q, rule })
    }

    pub fn state_dim(&self) -> usize {
        self.q.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.r.ncols()
    }

    /// `Rℓ − Qz`.
    pub fn driving_force(&self, load: &Vector, z: &Vector) -> Vector {
        &self.r * load - self.q.apply(z)
    }

    fn check_load(&self, load: &Trajectory) -> Result<()> {
        check_dim("load", self.control_dim(), load.dim())
    }
}

/// Per-step Newton iteration counts of a forward solve.
#[derive(Clone, Debug, Default)]
pub struct SolveStats {
    pub iterations: Vec<usize>,
}

impl SolveStats {
    pub fn total(&self) -> usize {
        self.iterations.iter().sum()
    }

    pub fn max(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }
}

/// Implicit Euler for `ż = A_{λ,ε}(Rℓ − Qz)`.
pub fn integrate_smoothed(pd: &ProblemData, p: &RegParams, load: &Trajectory) -> Result<Trajectory> {
    integrate_smoothed_with_stats(pd, p, load).map(|(z, _)| z)
}

pub fn integrate_smoothed_with_stats(
    pd: &ProblemData,
    p: &RegParams,
    load: &Trajectory,
) -> Result<(Trajectory, SolveStats)> {
    p.validate()?;
    integrate_field(
        pd,
        load,
        |y| pd.rule.smoothed_eval(y, p),
        |y| pd.rule.smoothed_derivative(y, p),
    )
}

/// Implicit Euler for `ż = A_λ(Rℓ − Qz)` with semismooth Newton.
pub fn integrate_yosida(pd: &ProblemData, lambda: f64, load: &Trajectory) -> Result<Trajectory> {
    integrate_yosida_with_stats(pd, lambda, load).map(|(z, _)| z)
}

pub fn integrate_yosida_with_stats(
    pd: &ProblemData,
    lambda: f64,
    load: &Trajectory,
) -> Result<(Trajectory, SolveStats)> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    integrate_field(
        pd,
        load,
        |y| pd.rule.yosida(y, lambda),
        |y| pd.rule.yosida_derivative(y, lambda),
    )
}

fn integrate_field(
    pd: &ProblemData,
    load: &Trajectory,
    field: impl Fn(&Vector) -> Vector,
    jacobian: impl Fn(&Vector) -> LinearMap,
) -> Result<(Trajectory, SolveStats)> {
    pd.check_load(load)?;
    let grid = *load.grid();
    let tau = grid.step();
    let m = pd.state_dim();
    let qm = pd.q.matrix();
    let mut values = Vec::with_capacity(grid.steps + 1);
    let mut stats = SolveStats::default();
    values.push(pd.z0.clone());

    for k in 0..grid.steps {
        let prev = &values[k];
        let force = &pd.r * load.value(k + 1);
        let residual = |z: &Vector| -> Vector { z - prev - field(&(&force - qm * z)) * tau };
        let tol = NEWTON_RTOL * (1.0 + prev.norm());

        let mut z = prev.clone();
        let mut res = residual(&z);
        let mut norm = res.norm();
        let mut iters = 0;
        let mut converged = norm <= tol;
        while !converged {
            if iters == NEWTON_MAX_ITER {
                return Err(Error::NewtonDiverged { step: k + 1, residual: norm });
            }
            iters += 1;
            let jac = LinearMap::identity(m, m) + jacobian(&(&force - qm * &z)) * qm * tau;
            let dz = solve_general(&jac, &(-&res)).ok_or(Error::SingularStep { step: k + 1 })?;
            let (next, next_res, next_norm) = damped_update(&z, &dz, norm, &residual)
                .ok_or(Error::NewtonDiverged { step: k + 1, residual: norm })?;
            z = next;
            res = next_res;
            norm = next_norm;
            converged = norm <= tol;
        }
        // one polishing step once inside the tolerance
        if norm > 0.0 {
            let jac = LinearMap::identity(m, m) + jacobian(&(&force - qm * &z)) * qm * tau;
            if let Some(dz) = solve_general(&jac, &(-&res)) {
                let cand = &z + dz;
                if residual(&cand).norm() < norm {
                    z = cand;
                }
            }
        }
        stats.iterations.push(iters);
        values.push(z);
    }
    debug!("forward solve: {} Newton iterations over {} steps", stats.total(), grid.steps);
    Ok((Trajectory::new(grid, values)?, stats))
}

/// Residual-halving line search. Returns `None` when every halving fails to
/// reduce the residual norm.
fn damped_update(
    x: &Vector,
    dx: &Vector,
    norm: f64,
    residual: &impl Fn(&Vector) -> Vector,
) -> Option<(Vector, Vector, f64)> {
    let mut step = 1.0;
    for _ in 0..=NEWTON_MAX_HALVINGS {
        let cand = x + dx * step;
        let res = residual(&cand);
        let n = res.norm();
        if n.is_finite() && n < norm {
            return Some((cand, res, n));
        }
        step *= 0.5;
    }
    None
}

/// Reference solver for the unregularized inclusion.
///
/// Each step finds `q_{k+1}` with `q_{k+1} + τ Q v = q_k + R(ℓ_{k+1} − ℓ_k)`,
/// `v ∈ A(q_{k+1})`, written as the fixed point
/// `q = R_s(q − (s/τ) Q⁻¹ (q − q_pred))` with `s = τ γ_Q`. Semismooth Newton
/// is tried first, forward-backward iteration is the fallback.
pub fn integrate_reference(pd: &ProblemData, load: &Trajectory) -> Result<Trajectory> {
    integrate_reference_with_stats(pd, load).map(|(z, _)| z)
}

pub fn integrate_reference_with_stats(pd: &ProblemData, load: &Trajectory) -> Result<(Trajectory, SolveStats)> {
    pd.check_load(load)?;
    let grid = *load.grid();
    let tau = grid.step();
    let m = pd.state_dim();
    let q0 = pd.driving_force(load.value(0), &pd.z0);
    let distance = pd.rule.distance_to_domain(&q0);
    if distance > DOMAIN_TOL * (1.0 + q0.norm()) {
        return Err(Error::IncompatibleInitialState { distance });
    }

    let s = tau * pd.gamma_q;
    let qinv = pd.q.inverse();
    let contraction = LinearMap::identity(m, m) - &qinv * (s / tau);
    let mut stats = SolveStats::default();
    let mut values = Vec::with_capacity(grid.steps + 1);
    values.push(pd.z0.clone());
    let mut q = q0;

    for k in 0..grid.steps {
        let pred = &q + &pd.r * (load.value(k + 1) - load.value(k));
        let tol = 1e-12 * (1.0 + pred.norm());
        let residual = |x: &Vector| -> Vector {
            let arg = x - &qinv * (x - &pred) * (s / tau);
            x - pd.rule.resolvent(&arg, s)
        };

        let (next, iters) = match resolvent_newton(pd, &residual, &contraction, &pred, q.clone(), s, tol) {
            Some(found) => found,
            None => {
                debug!("step {}: semismooth Newton failed, falling back to fixed point", k + 1);
                forward_backward(pd, &residual, q.clone(), s, &qinv, &pred, tau, tol, k + 1)?
            }
        };
        q = next;
        stats.iterations.push(iters);
        values.push(pd.q.solve(&(&pd.r * load.value(k + 1) - &q))?);
    }
    Ok((Trajectory::new(grid, values)?, stats))
}

fn resolvent_newton(
    pd: &ProblemData,
    residual: &impl Fn(&Vector) -> Vector,
    contraction: &LinearMap,
    pred: &Vector,
    start: Vector,
    s: f64,
    tol: f64,
) -> Option<(Vector, usize)> {
    let m = pred.len();
    let mut q = start;
    let mut res = residual(&q);
    let mut norm = res.norm();
    let mut iters = 0;
    while norm > tol {
        if iters == NEWTON_MAX_ITER {
            return None;
        }
        iters += 1;
        let arg = contraction * &q + (pred - contraction * pred);
        let jac = LinearMap::identity(m, m) - pd.rule.resolvent_derivative(&arg, s) * contraction;
        let dq = solve_general(&jac, &(-&res))?;
        let (next, next_res, next_norm) = damped_update(&q, &dq, norm, residual)?;
        q = next;
        res = next_res;
        norm = next_norm;
    }
    Some((q, iters))
}

#[allow(clippy::too_many_arguments)]
fn forward_backward(
    pd: &ProblemData,
    residual: &impl Fn(&Vector) -> Vector,
    start: Vector,
    s: f64,
    qinv: &LinearMap,
    pred: &Vector,
    tau: f64,
    tol: f64,
    step: usize,
) -> Result<(Vector, usize)> {
    let mut q = start;
    for it in 1..=FIXED_POINT_MAX_ITER {
        q = pd.rule.resolvent(&(&q - qinv * (&q - pred) * (s / tau)), s);
        if it % 16 == 0 && residual(&q).norm() <= tol {
            return Ok((q, it));
        }
    }
    Err(Error::SubproblemDiverged { step, residual: residual(&q).norm() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TimeGrid;

    fn scalar(q: f64, z0: f64, rule: FlowRule) -> ProblemData {
        let qm = SymPosDefMap::new(LinearMap::from_element(1, 1, q)).unwrap();
        ProblemData::new(qm, LinearMap::identity(1, 1), Vector::from_element(1, z0), rule).unwrap()
    }

    fn linear_oracle(q: f64, c: f64, z0: f64, t: f64) -> f64 {
        c / q + (z0 - c / q) * (-q * t).exp()
    }

    #[test]
    fn smoothed_linear_rule_matches_closed_form() {
        let (q, c, z0) = (2.0, 1.5, 0.25);
        let pd = scalar(q, z0, FlowRule::linear(1.0).unwrap());
        let p = RegParams::new(0.1, 0.1).unwrap();
        let errors: Vec<f64> = [64, 128, 256]
            .iter()
            .map(|&n| {
                let grid = TimeGrid::new(1.0, n).unwrap();
                let load = Trajectory::constant(grid, Vector::from_element(1, c));
                let z = integrate_smoothed(&pd, &p, &load).unwrap();
                (0..=n)
                    .map(|k| (z.value(k)[0] - linear_oracle(q, c, z0, grid.node(k))).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((0.85..=1.15).contains(&order), "order {order}, errors {errors:?}");
        }
        assert!(errors[2] < 5e-3);
    }

    #[test]
    fn reference_q_identity_is_resolvent_step() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let rules = [
            FlowRule::linear(2.0).unwrap(),
            FlowRule::boxed(vec![-0.3], vec![0.3]).unwrap(),
        ];
        for rule in rules {
            let pd = scalar(1.0, 0.0, rule.clone());
            let load = Trajectory::from_fn(grid, |t| Vector::from_element(1, (3.0 * t).sin()));
            let z = integrate_reference(&pd, &load).unwrap();
            let tau = grid.step();
            let mut q = Vector::zeros(1);
            for k in 0..grid.steps {
                let pred = &q + (load.value(k + 1) - load.value(k));
                q = rule.resolvent(&pred, tau);
                let expected = load.value(k + 1) - &q;
                assert!((z.value(k + 1) - expected).amax() < 1e-11, "{rule:?} step {k}");
            }
        }
    }

    #[test]
    fn reference_linear_rule_first_order() {
        let (q, c, z0) = (1.5, 1.0, -0.5);
        let pd = scalar(q, z0, FlowRule::linear(1.0).unwrap());
        let errors: Vec<f64> = [50, 100, 200]
            .iter()
            .map(|&n| {
                let grid = TimeGrid::new(1.0, n).unwrap();
                let load = Trajectory::constant(grid, Vector::from_element(1, c));
                let z = integrate_reference(&pd, &load).unwrap();
                (0..=n)
                    .map(|k| (z.value(k)[0] - linear_oracle(q, c, z0, grid.node(k))).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((0.85..=1.15).contains(&order), "{errors:?}");
        }
    }

    #[test]
    fn incompatible_initial_state_reported() {
        let pd = scalar(1.0, 0.0, FlowRule::boxed(vec![-0.1], vec![0.1]).unwrap());
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let load = Trajectory::constant(grid, Vector::from_element(1, 1.0));
        match integrate_reference(&pd, &load) {
            Err(Error::IncompatibleInitialState { distance }) => assert!((distance - 0.9).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// RK4 on the Lipschitz Yosida field with a fine step.
    fn rk4_box(lambda: f64, load: impl Fn(f64) -> f64, t_end: f64, steps: usize) -> Vec<f64> {
        let f = |t: f64, z: f64| {
            let y = load(t) - z;
            (y - y.clamp(-0.2, 0.2)) / lambda
        };
        let h = t_end / steps as f64;
        let mut z = 0.0;
        let mut out = vec![z];
        for i in 0..steps {
            let t = i as f64 * h;
            let k1 = f(t, z);
            let k2 = f(t + h / 2.0, z + h / 2.0 * k1);
            let k3 = f(t + h / 2.0, z + h / 2.0 * k2);
            let k4 = f(t + h, z + h * k3);
            z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            out.push(z);
        }
        out
    }

    #[test]
    fn yosida_box_matches_rk4() {
        let lambda = 0.2;
        let pd = scalar(1.0, 0.0, FlowRule::boxed(vec![-0.2], vec![0.2]).unwrap());
        let load_fn = |t: f64| (4.0 * t).sin();
        let fine = 64 * 512;
        let oracle = rk4_box(lambda, load_fn, 1.0, fine);
        let errors: Vec<f64> = [64, 128, 256]
            .iter()
            .map(|&n| {
                let grid = TimeGrid::new(1.0, n).unwrap();
                let load = Trajectory::from_fn(grid, |t| Vector::from_element(1, load_fn(t)));
                let z = integrate_yosida(&pd, lambda, &load).unwrap();
                (0..=n).map(|k| (z.value(k)[0] - oracle[k * fine / n]).abs()).fold(0.0, f64::max)
            })
            .collect();
        assert!(errors[2] < 1e-2, "{errors:?}");
        for w in errors.windows(2) {
            assert!((w[0] / w[1]).log2() > 0.8, "{errors:?}");
        }
    }

    #[test]
    fn feasible_load_keeps_state_fixed() {
        let rule = FlowRule::von_mises(1.0, 3, 1).unwrap();
        let qm = SymPosDefMap::new(LinearMap::identity(9, 9)).unwrap();
        let pd = ProblemData::new(qm, LinearMap::identity(9, 9), Vector::zeros(9), rule).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let dir = Vector::from_vec(vec![0.1, 0.2, 0.0, 0.2, -0.3, 0.0, 0.0, 0.0, 0.2]);
        let load = Trajectory::from_fn(grid, |t| &dir * t);
        let p = RegParams::new(0.1, 0.1).unwrap();
        for z in [
            integrate_smoothed(&pd, &p, &load).unwrap(),
            integrate_yosida(&pd, 0.1, &load).unwrap(),
            integrate_reference(&pd, &load).unwrap(),
        ] {
            assert!(z.cnorm() < 1e-14);
        }
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let pd = scalar(1.0, 0.0, FlowRule::linear(1.0).unwrap());
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let load = Trajectory::zeros(grid, 2);
        assert!(matches!(integrate_yosida(&pd, 0.1, &load), Err(Error::DimensionMismatch { .. })));
        let qm = SymPosDefMap::new(LinearMap::identity(2, 2)).unwrap();
        assert!(ProblemData::new(qm.clone(), LinearMap::identity(2, 1), Vector::zeros(3), FlowRule::linear(1.0).unwrap()).is_err());
        assert!(ProblemData::with_gamma(qm, LinearMap::identity(2, 1), Vector::zeros(2), 2.0, FlowRule::linear(1.0).unwrap()).is_err());
    }
}
