//! Reduced optimal control: H¹ Riesz map, preconditioned gradient descent,
//! regularization continuation and sampled second-order checks.
//!
//! Controls vanish at `t = 0`, and on that subspace the control norm is
//! `‖ℓ‖_{H¹} = ‖ℓ̇‖_{L²}` (the seminorm is a norm there).

use std::io::Write;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::ProblemData;
use crate::flow_rule::RegParams;
use crate::linalg::{solve_tridiagonal, Vector};
use crate::objective::{check_initial_control, evaluate_objective, Objective};
use crate::sensitivity::Linearization;
use crate::smoothing::MAX_EPSILON;
use crate::trajectory::{fmt_f64, Trajectory, CSV_SCHEMA_LINE};

/// H¹ representer `δ` of a Euclidean gradient `g`: `δ_0 = 0` and
/// `γ ⟨δ̇, ḣ⟩ = ⟨g, h⟩` for every `h` with `h_0 = 0`.
pub fn riesz_h1(g: &Trajectory, gamma: f64) -> Result<Trajectory> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter("gamma must be positive".into()));
    }
    let grid = *g.grid();
    let n = grid.steps;
    let scale = gamma / grid.step();
    let mut diag = vec![2.0 * scale; n];
    diag[n - 1] = scale;
    let off = vec![-scale; n - 1];
    let mut out = vec![Vector::zeros(g.dim()); n + 1];
    for j in 0..g.dim() {
        let rhs = Vector::from_fn(n, |k, _| g.value(k + 1)[j]);
        let col = solve_tridiagonal(&off, &diag, &off, &rhs)?;
        for (slot, v) in out[1..].iter_mut().zip(col.iter()) {
            slot[j] = *v;
        }
    }
    Trajectory::new(grid, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    H1,
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
    pub armijo_c1: f64,
    pub max_halvings: usize,
    pub initial_step: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            preconditioner: Preconditioner::H1,
            armijo_c1: 1e-4,
            max_halvings: 20,
            initial_step: 1.0,
        }
    }
}

impl OptimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("optimizer tol must be positive, got {}", self.tol)));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 <= 1.0) {
            return Err(Error::InvalidParameter(format!("armijo_c1 must lie in (0, 1], got {}", self.armijo_c1)));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidParameter(format!("initial_step must be positive, got {}", self.initial_step)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// Step accepted after this iterate; zero for the final record.
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub history: Vec<IterRecord>,
    pub control: Trajectory,
    pub status: OptimizeStatus,
}

impl OptimizeReport {
    pub fn converged(&self) -> bool {
        self.status == OptimizeStatus::Converged
    }

    pub fn final_objective(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.grad_norm)
    }

    /// Turns a stalled line search into [`Error::LineSearchFailed`].
    pub fn into_result(self, max_halvings: usize) -> Result<Self> {
        match self.status {
            OptimizeStatus::LineSearchFailed => Err(Error::LineSearchFailed {
                iteration: self.history.len().saturating_sub(1),
                halvings: max_halvings,
            }),
            _ => Ok(self),
        }
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{CSV_SCHEMA_LINE}")?;
        writeln!(w, "iter,F,grad_norm,step")?;
        for r in &self.history {
            writeln!(w, "{},{},{},{}", r.iter, fmt_f64(r.objective), fmt_f64(r.grad_norm), fmt_f64(r.step))?;
        }
        Ok(())
    }
}

/// Objective value, Euclidean gradient and its H¹ dual norm at one control.
struct Evaluation {
    value: f64,
    grad: Trajectory,
    riesz: Trajectory,
    grad_norm: f64,
}

fn evaluate(pd: &ProblemData, p: &RegParams, load: &Trajectory, objective: &Objective) -> Result<Evaluation> {
    let lin = Linearization::new(pd, p, load)?;
    let adj = lin.adjoint(objective)?;
    let grad = lin.gradient(objective, &adj)?;
    let riesz = riesz_h1(&grad, objective.gamma())?;
    let grad_norm = grad.dot(&riesz).max(0.0).sqrt();
    let value = objective.value_from_states(lin.state(), load);
    Ok(Evaluation { value, grad, riesz, grad_norm })
}

/// Gradient descent in the chosen metric with Armijo backtracking.
///
/// The first trial step of each line search is a Barzilai-Borwein estimate in
/// the same metric, falling back to twice the previous accepted step.
pub fn optimize(
    pd: &ProblemData,
    p: &RegParams,
    init: &Trajectory,
    objective: &Objective,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport> {
    check_initial_control(init)?;
    p.validate()?;
    opts.validate()?;
    let gamma = objective.gamma();
    let mut load = init.clone();
    let mut current = evaluate(pd, p, &load, objective)?;
    let mut history = Vec::new();
    let mut step = opts.initial_step;
    let mut previous: Option<(Trajectory, Trajectory)> = None;

    for iter in 0..=opts.max_iter {
        if current.grad_norm <= opts.tol {
            history.push(IterRecord { iter, objective: current.value, grad_norm: current.grad_norm, step: 0.0 });
            return Ok(OptimizeReport { history, control: load, status: OptimizeStatus::Converged });
        }
        if iter == opts.max_iter {
            history.push(IterRecord { iter, objective: current.value, grad_norm: current.grad_norm, step: 0.0 });
            return Ok(OptimizeReport { history, control: load, status: OptimizeStatus::MaxIterations });
        }
        let direction = match opts.preconditioner {
            Preconditioner::H1 => current.riesz.clone(),
            Preconditioner::Euclidean => current.grad.clone(),
        };
        let slope = current.grad.dot(&direction);

        let mut trial = (2.0 * step).min(1e6);
        if let Some((ds, dg)) = &previous {
            let sy = ds.dot(dg);
            let ss = match opts.preconditioner {
                Preconditioner::H1 => gamma * ds.h1_inner(ds),
                Preconditioner::Euclidean => ds.dot(ds),
            };
            if sy > 0.0 && ss > 0.0 {
                trial = ss / sy;
            }
        }

        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = load.add_scaled(&direction, -trial)?;
            match evaluate(pd, p, &cand, objective) {
                Ok(ev) if ev.value <= current.value - opts.armijo_c1 * trial * slope && ev.value < current.value => {
                    accepted = Some((cand, ev));
                    break;
                }
                Ok(_) => {}
                Err(e) => debug!("trial step {trial:e} rejected: {e}"),
            }
            trial *= 0.5;
        }
        let Some((next, ev)) = accepted else {
            history.push(IterRecord { iter, objective: current.value, grad_norm: current.grad_norm, step: 0.0 });
            return Ok(OptimizeReport { history, control: load, status: OptimizeStatus::LineSearchFailed });
        };
        history.push(IterRecord { iter, objective: current.value, grad_norm: current.grad_norm, step: trial });
        previous = Some((next.sub(&load)?, ev.grad.sub(&current.grad)?));
        step = trial;
        load = next;
        current = ev;
    }
    unreachable!("loop returns at max_iter")
}

/// One `(λ, ε)` pair with its coupling factor `θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStage {
    pub lambda: f64,
    pub epsilon: f64,
    pub theta: f64,
}

/// Regularization schedule with `ε_n ≤ θ_n λ_n² exp(−T‖Q‖/λ_n)` and `θ_n`
/// strictly decreasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegSchedule {
    pub stages: Vec<ScheduleStage>,
}

impl RegSchedule {
    /// `λ_n = 2⁻ⁿ λ₀`, `θ_n = 2⁻ⁿ / 2`, `ε_n = θ_n λ_n² exp(−T‖Q‖/λ_n)`.
    pub fn geometric(lambda0: f64, stages: usize, final_time: f64, q_norm: f64) -> Result<Self> {
        let stages = (0..stages)
            .map(|n| {
                let lambda = lambda0 * 0.5f64.powi(n as i32);
                let theta = 0.5 * 0.5f64.powi(n as i32);
                let epsilon = (theta.ln() + 2.0 * lambda.ln() - final_time * q_norm / lambda).exp();
                ScheduleStage { lambda, epsilon, theta }
            })
            .collect();
        let s = Self { stages };
        s.validate(final_time, q_norm)?;
        Ok(s)
    }

    /// Default five-stage schedule starting at `λ₀ = 1/2`.
    pub fn default_for(final_time: f64, q_norm: f64) -> Result<Self> {
        Self::geometric(0.5, 5, final_time, q_norm)
    }

    /// Coupling ratio `ε λ⁻² exp(T‖Q‖/λ)`, computed in log space.
    pub fn coupling_ratio(stage: &ScheduleStage, final_time: f64, q_norm: f64) -> f64 {
        (stage.epsilon.ln() - 2.0 * stage.lambda.ln() + final_time * q_norm / stage.lambda).exp()
    }

    pub fn validate(&self, final_time: f64, q_norm: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("schedule: {m}")));
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        for (i, st) in self.stages.iter().enumerate() {
            RegParams::new(st.lambda, st.epsilon)?;
            if !(st.theta > 0.0 && st.theta <= 1.0) {
                return bad(format!("theta {} outside (0, 1]", st.theta));
            }
            if Self::coupling_ratio(st, final_time, q_norm) > st.theta * (1.0 + 1e-9) {
                return bad(format!("stage {i} violates the epsilon-lambda coupling"));
            }
            if i > 0 {
                let prev = &self.stages[i - 1];
                if !(st.lambda < prev.lambda) || !(st.theta < prev.theta) {
                    return bad(format!("stage {i}: lambda and theta must decrease strictly"));
                }
            }
        }
        debug_assert!(self.stages.iter().all(|s| s.epsilon <= MAX_EPSILON));
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = RegParams> + '_ {
        self.stages.iter().map(|s| RegParams { lambda: s.lambda, epsilon: s.epsilon })
    }
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub stage: ScheduleStage,
    pub report: OptimizeReport,
    /// `‖ℓ_n − ℓ_{n−1}‖_{H¹}`; `None` for the first stage.
    pub distance: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ContinuationReport {
    pub stages: Vec<StageReport>,
}

impl ContinuationReport {
    pub fn distances(&self) -> Vec<f64> {
        self.stages.iter().filter_map(|s| s.distance).collect()
    }

    pub fn objective_gaps(&self) -> Vec<f64> {
        self.stages
            .windows(2)
            .map(|w| (w[1].report.final_objective() - w[0].report.final_objective()).abs())
            .collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{CSV_SCHEMA_LINE}")?;
        writeln!(w, "stage,lambda,epsilon,theta,F,grad_norm,iterations,status,distance_h1")?;
        for (i, s) in self.stages.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{:?},{}",
                i,
                fmt_f64(s.stage.lambda),
                fmt_f64(s.stage.epsilon),
                fmt_f64(s.stage.theta),
                fmt_f64(s.report.final_objective()),
                fmt_f64(s.report.final_grad_norm()),
                s.report.history.len() - 1,
                s.report.status,
                s.distance.map_or_else(String::new, fmt_f64),
            )?;
        }
        Ok(())
    }
}

/// Optimizes stage by stage, warm-starting from the previous minimizer.
pub fn continuation(
    pd: &ProblemData,
    schedule: &RegSchedule,
    init: &Trajectory,
    objective: &Objective,
    opts: &OptimizeOptions,
) -> Result<ContinuationReport> {
    let mut stages: Vec<StageReport> = Vec::with_capacity(schedule.stages.len());
    let mut start = init.clone();
    for (st, p) in schedule.stages.iter().zip(schedule.params()) {
        let report = optimize(pd, &p, &start, objective, opts)?;
        let distance = match stages.last() {
            Some(prev) => Some(report.control.sub(&prev.report.control)?.h1seminorm()),
            None => None,
        };
        info!(
            "stage lambda={:e} eps={:e}: F={:e}, |grad|={:e}, {:?}",
            st.lambda,
            st.epsilon,
            report.final_objective(),
            report.final_grad_norm(),
            report.status
        );
        start = report.control.clone();
        stages.push(StageReport { stage: *st, report, distance });
    }
    Ok(ContinuationReport { stages })
}

/// Random control directions with `h_0 = 0` and unit H¹ norm.
pub fn random_directions(template: &Trajectory, count: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = *template.grid();
    let dim = template.dim();
    (0..count)
        .map(|_| {
            let mut values: Vec<Vector> =
                (0..=grid.steps).map(|_| Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0))).collect();
            values[0].fill(0.0);
            let h = Trajectory::new(grid, values).expect("finite by construction");
            let norm = h.h1seminorm();
            h.scale(1.0 / norm)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SscReport {
    /// `F''(ℓ)[h, h] / ‖h‖²_{H¹}` per sampled direction.
    pub quotients: Vec<f64>,
    pub min_quotient: f64,
    pub pass: bool,
    pub directions: Vec<Trajectory>,
}

/// Samples `n_dirs` directions and reports the smallest Hessian quotient.
pub fn ssc_verify(
    pd: &ProblemData,
    p: &RegParams,
    load: &Trajectory,
    objective: &Objective,
    n_dirs: usize,
    delta_target: f64,
    seed: u64,
) -> Result<SscReport> {
    check_initial_control(load)?;
    if n_dirs == 0 {
        return Err(Error::InvalidParameter("need at least one direction".into()));
    }
    let lin = Linearization::new(pd, p, load)?;
    let adj = lin.adjoint(objective)?;
    let directions = random_directions(load, n_dirs, seed);
    let quotients = directions
        .iter()
        .map(|h| Ok(lin.hessian_form(objective, &adj, h)? / h.h1_inner(h)))
        .collect::<Result<Vec<f64>>>()?;
    let min_quotient = quotients.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SscReport { quotients, min_quotient, pass: min_quotient >= delta_target, directions })
}

/// Largest `t₀ ≤ t_max`, found by bisection, with
/// `F(ℓ + t₀h) − F(ℓ) ≥ (δ/4) t₀² ‖h‖²_{H¹}`.
pub fn growth_radius(
    pd: &ProblemData,
    p: &RegParams,
    load: &Trajectory,
    objective: &Objective,
    h: &Trajectory,
    delta: f64,
    t_max: f64,
) -> Result<f64> {
    let base = evaluate_objective(pd, p, load, objective)?;
    let hh = h.h1_inner(h);
    let holds = |t: f64| -> Result<bool> {
        let f = evaluate_objective(pd, p, &load.add_scaled(h, t)?, objective)?;
        Ok(f - base >= 0.25 * delta * t * t * hh)
    };
    if holds(t_max)? {
        return Ok(t_max);
    }
    let (mut lo, mut hi) = (0.0, t_max);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_rule::FlowRule;
    use crate::linalg::{LinearMap, SymPosDefMap};
    use crate::objective::{Observation, ObjectiveSpec};
    use crate::trajectory::TimeGrid;

    fn scalar() -> ProblemData {
        let q = SymPosDefMap::new(LinearMap::from_element(1, 1, 2.0)).unwrap();
        ProblemData::new(q, LinearMap::identity(1, 1), Vector::zeros(1), FlowRule::linear(1.0).unwrap()).unwrap()
    }

    fn objective(alpha: f64, gamma: f64) -> Objective {
        let spec = ObjectiveSpec { alpha, beta: 0.0, gamma, u_target: vec![0.8], sigma_target: vec![] };
        Objective::new(spec, Observation::state(1, 1)).unwrap()
    }

    #[test]
    fn riesz_zero_and_two_step_hand_solution() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        assert_eq!(riesz_h1(&Trajectory::zeros(grid, 1), 0.5).unwrap().cnorm(), 0.0);
        // (γ/τ) [[2, −1], [−1, 1]] δ = g with γ = 0.5, τ = 0.5
        let g = Trajectory::new(grid, vec![Vector::zeros(1), Vector::from_element(1, 1.0), Vector::from_element(1, 2.0)])
            .unwrap();
        let d = riesz_h1(&g, 0.5).unwrap();
        assert!((d.value(1)[0] - 3.0).abs() < 1e-14);
        assert!((d.value(2)[0] - 5.0).abs() < 1e-14);
        assert_eq!(d.value(0)[0], 0.0);
    }

    #[test]
    fn riesz_represents_the_gradient() {
        let grid = TimeGrid::new(2.0, 37).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rand_traj = |zero_start: bool| {
            let mut v: Vec<Vector> = (0..=37).map(|_| Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0))).collect();
            if zero_start {
                v[0].fill(0.0);
            }
            Trajectory::new(grid, v).unwrap()
        };
        let g = rand_traj(true);
        let d = riesz_h1(&g, 0.3).unwrap();
        for _ in 0..10 {
            let h = rand_traj(true);
            assert!((g.dot(&h) - 0.3 * d.h1_inner(&h)).abs() < 1e-10 * (1.0 + g.dot(&h).abs()));
        }
    }

    #[test]
    fn regularizer_only_converges_to_zero() {
        let pd = scalar();
        let obj = objective(0.0, 0.1);
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let init = random_directions(&Trajectory::zeros(grid, 1), 1, 5).remove(0);
        let p = RegParams::new(0.1, 0.1).unwrap();
        let report = optimize(&pd, &p, &init, &obj, &OptimizeOptions::default()).unwrap();
        assert!(report.converged());
        assert!(report.control.cnorm() < 1e-8);
        assert!(report.final_objective() < 1e-16);
        assert!(report.final_grad_norm() <= 1e-8);
    }

    #[test]
    fn objective_decreases_monotonically() {
        let pd = scalar();
        let obj = objective(10.0, 0.01);
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let p = RegParams::new(0.1, 0.1).unwrap();
        let report = optimize(&pd, &p, &Trajectory::zeros(grid, 1), &obj, &OptimizeOptions::default()).unwrap();
        assert!(report.converged(), "{:?}", report.status);
        for w in report.history.windows(2) {
            assert!(w[1].objective < w[0].objective);
        }
    }

    #[test]
    fn default_schedule_is_admissible() {
        let s = RegSchedule::default_for(1.0, 3.0).unwrap();
        assert_eq!(s.stages.len(), 5);
        assert!((s.stages[0].lambda - 0.5).abs() < 1e-15);
        for st in &s.stages {
            let ratio = RegSchedule::coupling_ratio(st, 1.0, 3.0);
            assert!(ratio <= st.theta * (1.0 + 1e-9));
        }
        let mut broken = s.clone();
        broken.stages[2].epsilon *= 4.0;
        assert!(broken.validate(1.0, 3.0).is_err());
        let mut unordered = s;
        unordered.stages.swap(0, 1);
        assert!(unordered.validate(1.0, 3.0).is_err());
    }

    #[test]
    fn ssc_regularizer_quotient_is_gamma_and_scale_free() {
        let pd = scalar();
        let obj = objective(0.0, 0.25);
        let grid = TimeGrid::new(1.0, 12).unwrap();
        let p = RegParams::new(0.1, 0.1).unwrap();
        let load = Trajectory::zeros(grid, 1);
        let rep = ssc_verify(&pd, &p, &load, &obj, 6, 0.2, 3).unwrap();
        assert!(rep.pass);
        assert!((rep.min_quotient - 0.25).abs() < 1e-12);
        let lin = Linearization::new(&pd, &p, &load).unwrap();
        let adj = lin.adjoint(&obj).unwrap();
        let h = &rep.directions[0];
        let q1 = lin.hessian_form(&obj, &adj, h).unwrap() / h.h1_inner(h);
        let h2 = h.scale(2.0);
        let q2 = lin.hessian_form(&obj, &adj, &h2).unwrap() / h2.h1_inner(&h2);
        assert!((q1 - q2).abs() < 1e-12);
    }

    #[test]
    fn report_csv_layout() {
        let report = OptimizeReport {
            history: vec![IterRecord { iter: 0, objective: 1.0, grad_norm: 0.5, step: 0.25 }],
            control: Trajectory::zeros(TimeGrid::new(1.0, 1).unwrap(), 1),
            status: OptimizeStatus::MaxIterations,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# schema=v1");
        assert_eq!(lines[1], "iter,F,grad_norm,step");
        assert!(lines[2].starts_with("0,1.0000000000000000e0,"));
        let failed = OptimizeReport { status: OptimizeStatus::LineSearchFailed, ..report };
        assert!(matches!(failed.into_result(20), Err(Error::LineSearchFailed { .. })));
    }
}
