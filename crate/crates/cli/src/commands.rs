//! Subcommand implementations. Each writes its CSV artifacts into the output
//! directory and prints a short summary on standard output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use monoflow_core::control::{
    continuation, growth_radius, optimize, random_directions, ssc_verify, OptimizeReport, OptimizeStatus,
};
use monoflow_core::evolution::{
    integrate_reference_with_stats, integrate_smoothed_with_stats, integrate_yosida_with_stats, SolveStats,
};
use monoflow_core::homogenized::{make_toy_instance, ToySizes};
use monoflow_core::presets;
use monoflow_core::sensitivity::Linearization;
use monoflow_core::trajectory::{fmt_f64, CSV_SCHEMA_LINE};
use monoflow_core::{evaluate_objective, integrate_reference, integrate_yosida, Trajectory};

use crate::config::{InstanceSource, Resolved, RunConfig, SolverKind};
use crate::exit::CliError;

/// Output directory; created on first write.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn write(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| CliError::Output(format!("{}: {e}", self.dir.display())))?;
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
    }

    pub fn write_trajectory(&self, name: &str, tr: &Trajectory) -> Result<(), CliError> {
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).map_err(CliError::output)?;
        self.write(name, |w| w.write_all(&buf))
    }

    fn write_report(&self, name: &str, report: &OptimizeReport) -> Result<(), CliError> {
        let mut buf = Vec::new();
        report.write_csv(&mut buf).map_err(CliError::output)?;
        self.write(name, |w| w.write_all(&buf))
    }
}

fn csv_header(w: &mut impl Write, columns: &str) -> std::io::Result<()> {
    writeln!(w, "{CSV_SCHEMA_LINE}")?;
    writeln!(w, "{columns}")
}

pub fn forward(r: &Resolved, out: &Output) -> Result<(), CliError> {
    let pd = &r.problem;
    let (z, stats): (Trajectory, SolveStats) = match r.config.solver {
        SolverKind::Smoothed => integrate_smoothed_with_stats(pd, &r.reg_params()?, &r.load),
        SolverKind::Yosida => integrate_yosida_with_stats(pd, r.reg_params()?.lambda, &r.load),
        SolverKind::Reference => integrate_reference_with_stats(pd, &r.load),
    }
    .map_err(CliError::solver)?;
    out.write_trajectory("trajectory.csv", &z)?;
    out.write("diagnostics.csv", |w| {
        csv_header(w, "quantity,value")?;
        writeln!(w, "cnorm,{}", fmt_f64(z.cnorm()))?;
        writeln!(w, "l2norm,{}", fmt_f64(z.l2norm()))?;
        writeln!(w, "h1seminorm,{}", fmt_f64(z.h1seminorm()))?;
        writeln!(w, "newton_total,{}", stats.total())?;
        writeln!(w, "newton_max,{}", stats.max())
    })?;
    out.write("newton.csv", |w| {
        csv_header(w, "step,iterations")?;
        for (k, it) in stats.iterations.iter().enumerate() {
            writeln!(w, "{},{it}", k + 1)?;
        }
        Ok(())
    })?;
    println!(
        "forward ({:?}): {} steps, ‖z‖_C = {:.6e}, Newton iterations total {} max {}",
        r.config.solver,
        r.grid.steps,
        z.cnorm(),
        stats.total(),
        stats.max()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub c_error: f64,
    pub bound: f64,
    pub ratio: f64,
    pub observed_order: Option<f64>,
}

pub fn yosida_sweep(r: &Resolved, lambdas: Option<&[f64]>, out: &Output) -> Result<(), CliError> {
    let pd = &r.problem;
    let cfg = &r.config.sweep;
    let lambdas = lambdas.unwrap_or(&cfg.lambdas);
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(CliError::Config("lambda list must be non-empty and positive".into()));
    }
    if cfg.refine == 0 {
        return Err(CliError::Config("sweep.refine must be at least 1".into()));
    }
    let fine = r.load.resample(r.grid.refined(cfg.refine));
    let z_fine = integrate_reference(pd, &fine).map_err(CliError::solver)?;
    let zdot = z_fine.h1seminorm();
    let z_ref = z_fine.restrict(r.grid).map_err(CliError::solver)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for &lambda in lambdas {
        let z = integrate_yosida(pd, lambda, &r.load).map_err(CliError::solver)?;
        let c_error = z.sub(&z_ref).map_err(CliError::solver)?.cnorm();
        let bound = (lambda / pd.gamma_q).sqrt() * zdot;
        let ratio = if bound > 0.0 { c_error / bound } else if c_error == 0.0 { 0.0 } else { f64::INFINITY };
        let observed_order = rows.last().map(|prev| (c_error / prev.c_error).ln() / (lambda / prev.lambda).ln());
        info!("lambda {lambda:e}: C error {c_error:e}, bound {bound:e}");
        rows.push(SweepRow { lambda, c_error, bound, ratio, observed_order });
    }
    out.write("yosida_sweep.csv", |w| {
        csv_header(w, "lambda,C_error,bound,ratio,observed_order")?;
        for row in &rows {
            let order = row.observed_order.map_or_else(String::new, fmt_f64);
            writeln!(w, "{},{},{},{},{order}", fmt_f64(row.lambda), fmt_f64(row.c_error), fmt_f64(row.bound), fmt_f64(row.ratio))?;
        }
        Ok(())
    })?;
    let worst = rows.iter().map(|row| row.ratio).fold(0.0, f64::max);
    println!("yosida-sweep: {} values of lambda, max ratio {worst:.4} (limit {})", rows.len(), cfg.max_ratio);
    if worst > cfg.max_ratio {
        return Err(CliError::Check(format!("error ratio {worst} exceeds {}", cfg.max_ratio)));
    }
    Ok(())
}

fn optimizer_outcome(report: &OptimizeReport) -> Result<(), CliError> {
    let last = report.history.last().copied();
    let detail = || format!("{:?} after {} iterations", last.map(|l| l.grad_norm), report.history.len() - 1);
    match report.status {
        OptimizeStatus::Converged => Ok(()),
        OptimizeStatus::LineSearchFailed => Err(CliError::LineSearch(format!("gradient norm {}", detail()))),
        OptimizeStatus::MaxIterations => Err(CliError::MaxIterations(format!("gradient norm {}", detail()))),
    }
}

pub fn optimize_cmd(r: &Resolved, out: &Output) -> Result<(), CliError> {
    let pd = &r.problem;
    let p = r.reg_params()?;
    let objective = r.objective()?;
    let report = optimize(pd, &p, &r.load, &objective, &r.config.optimizer).map_err(CliError::solver)?;
    out.write_report("optimize.csv", &report)?;
    out.write_trajectory("control.csv", &report.control)?;
    let z = monoflow_core::integrate_smoothed(pd, &p, &report.control).map_err(CliError::solver)?;
    out.write_trajectory("state.csv", &z)?;
    println!(
        "optimize: {:?} after {} iterations, F = {:.12e}, gradient norm {:.3e}",
        report.status,
        report.history.len() - 1,
        report.final_objective(),
        report.final_grad_norm()
    );
    optimizer_outcome(&report)
}

pub fn check_gradient(r: &Resolved, out: &Output) -> Result<(), CliError> {
    let pd = &r.problem;
    let p = r.reg_params()?;
    let objective = r.objective()?;
    let checks = &r.config.checks;
    let lin = Linearization::new(pd, &p, &r.load).map_err(CliError::solver)?;
    let adj = lin.adjoint(&objective).map_err(CliError::solver)?;
    let g = lin.gradient(&objective, &adj).map_err(CliError::solver)?;
    let t = checks.fd_step;
    let mut rows = Vec::new();
    for h in random_directions(&r.load, checks.directions, r.seed()) {
        let f = |s: f64| -> Result<f64, CliError> {
            let shifted = r.load.add_scaled(&h, s).map_err(CliError::solver)?;
            evaluate_objective(pd, &p, &shifted, &objective).map_err(CliError::solver)
        };
        let fd = (f(t)? - f(-t)?) / (2.0 * t);
        let adjoint = g.dot(&h);
        rows.push((fd, adjoint, (fd - adjoint).abs() / (1.0 + adjoint.abs())));
    }
    out.write("gradient_check.csv", |w| {
        csv_header(w, "direction,fd,adjoint,rel_error")?;
        for (i, (fd, adjoint, rel)) in rows.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", fmt_f64(*fd), fmt_f64(*adjoint), fmt_f64(*rel))?;
        }
        Ok(())
    })?;
    out.write_trajectory("gradient.csv", &g)?;
    let worst = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let pass = worst <= checks.gradient_tol;
    println!(
        "check-gradient: {} directions, max relative error {worst:.3e} (tolerance {:.1e}): {}",
        rows.len(),
        checks.gradient_tol,
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Check(format!("gradient relative error {worst:e}")))
    }
}

/// Number of directions on which quadratic growth is probed after a pass.
const GROWTH_DIRECTIONS: usize = 5;
/// Growth is verified at `t₀ 2⁻ʲ` for `j = 0..=GROWTH_HALVINGS`.
const GROWTH_HALVINGS: i32 = 10;

pub fn check_ssc(r: &Resolved, out: &Output) -> Result<(), CliError> {
    let pd = &r.problem;
    let p = r.reg_params()?;
    let objective = r.objective()?;
    let checks = &r.config.checks;
    let point = if checks.ssc_optimize_first {
        let report = optimize(pd, &p, &r.load, &objective, &r.config.optimizer).map_err(CliError::solver)?;
        out.write_report("optimize.csv", &report)?;
        optimizer_outcome(&report)?;
        report.control
    } else {
        r.load.clone()
    };
    out.write_trajectory("control.csv", &point)?;
    let ssc = ssc_verify(pd, &p, &point, &objective, checks.ssc_directions, checks.ssc_delta, r.seed())
        .map_err(CliError::solver)?;
    out.write("ssc.csv", |w| {
        csv_header(w, "direction,quotient")?;
        for (i, q) in ssc.quotients.iter().enumerate() {
            writeln!(w, "{i},{}", fmt_f64(*q))?;
        }
        Ok(())
    })?;
    println!(
        "check-ssc: min quotient {:.6e} over {} directions (delta {:.1e}): {}",
        ssc.min_quotient,
        ssc.quotients.len(),
        checks.ssc_delta,
        if ssc.pass { "PASS" } else { "FAIL" }
    );
    if !ssc.pass {
        return Err(CliError::Check(format!("min quotient {:e} below {:e}", ssc.min_quotient, checks.ssc_delta)));
    }

    let base = evaluate_objective(pd, &p, &point, &objective).map_err(CliError::solver)?;
    let mut radii = Vec::new();
    let mut growth_ok = true;
    for h in ssc.directions.iter().take(GROWTH_DIRECTIONS) {
        let t0 = growth_radius(pd, &p, &point, &objective, h, ssc.min_quotient, checks.growth_t_max)
            .map_err(CliError::solver)?;
        let hh = h.h1_inner(h);
        let mut holds = t0 > 0.0;
        for j in 0..=GROWTH_HALVINGS {
            let t = t0 * 0.5f64.powi(j);
            let shifted = point.add_scaled(h, t).map_err(CliError::solver)?;
            let f = evaluate_objective(pd, &p, &shifted, &objective).map_err(CliError::solver)?;
            holds &= f - base >= 0.25 * ssc.min_quotient * t * t * hh;
        }
        growth_ok &= holds;
        radii.push((t0, holds));
    }
    out.write("growth.csv", |w| {
        csv_header(w, "direction,t0,holds")?;
        for (i, (t0, holds)) in radii.iter().enumerate() {
            writeln!(w, "{i},{},{holds}", fmt_f64(*t0))?;
        }
        Ok(())
    })?;
    println!(
        "check-ssc: quadratic growth on {} directions, t0 = {:?}: {}",
        radii.len(),
        radii.iter().map(|r| r.0).collect::<Vec<_>>(),
        if growth_ok { "PASS" } else { "FAIL" }
    );
    if growth_ok {
        Ok(())
    } else {
        Err(CliError::Check("quadratic growth violated".into()))
    }
}

pub fn continuation_cmd(r: &Resolved, out: &Output) -> Result<(), CliError> {
    let pd = &r.problem;
    let objective = r.objective()?;
    let schedule = r.schedule()?;
    let json = serde_json::to_string_pretty(&schedule.stages).map_err(CliError::output)?;
    out.write("schedule.json", |w| writeln!(w, "{json}"))?;
    let report = continuation(pd, &schedule, &r.load, &objective, &r.config.optimizer).map_err(CliError::solver)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(CliError::output)?;
    out.write("continuation.csv", |w| w.write_all(&buf))?;
    for (i, stage) in report.stages.iter().enumerate() {
        out.write_report(&format!("stage_{i}_optimize.csv"), &stage.report)?;
    }
    let last = report.stages.last().expect("schedule is non-empty");
    out.write_trajectory("control.csv", &last.report.control)?;
    for s in &report.stages {
        println!(
            "stage lambda={:.4e} epsilon={:.4e}: F = {:.12e}, {:?}, distance {}",
            s.stage.lambda,
            s.stage.epsilon,
            s.report.final_objective(),
            s.report.status,
            s.distance.map_or_else(|| "-".into(), |d| format!("{d:.4e}"))
        );
    }
    let dist = report.distances();
    let gaps = report.objective_gaps();
    if dist.len() < 3 {
        println!("continuation: fewer than four stages, monotonicity not assessed");
        return Ok(());
    }
    let tail_decreasing = |v: &[f64]| v[v.len() - 3..].windows(2).all(|w| w[1] <= w[0]);
    let pass = tail_decreasing(&dist) && tail_decreasing(&gaps);
    println!(
        "continuation: distances and objective gaps non-increasing over the last 3 stages: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Check(format!("distances {dist:?}, gaps {gaps:?}")))
    }
}

pub fn make_instance(config: &RunConfig, seed_override: Option<u64>, out: &Output) -> Result<(), CliError> {
    let (seed, sizes, c_floor, b_floor) = match &config.instance {
        InstanceSource::ToyVonMises { seed, .. } => {
            (seed_override.or(*seed).unwrap_or(config.seed), presets::sizes(), presets::C_FLOOR, presets::B_FLOOR)
        }
        InstanceSource::Toy { seed, sizes, c_floor, b_floor, .. } => {
            (seed_override.or(*seed).unwrap_or(config.seed), *sizes, *c_floor, *b_floor)
        }
        _ => return Err(CliError::Config("make-instance needs a generated (toy) instance source".into())),
    };
    let data = make_toy_instance(seed, sizes, c_floor, b_floor).map_err(CliError::config)?;
    monoflow_core::homogenized::assemble(&data).map_err(CliError::config)?;
    let json = data.to_json().map_err(CliError::output)?;
    out.write("instance.json", |w| writeln!(w, "{json}"))?;
    let ToySizes { displacement, strain, internal, loads, .. } = sizes;
    println!("make-instance: seed {seed}, n = {displacement}, s = {strain}, m = {internal}, p = {loads}");
    Ok(())
}

/// Directory the config's relative paths are resolved against.
pub fn config_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}
