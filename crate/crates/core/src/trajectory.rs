//! Uniform time grids and grid-sampled trajectories.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Schema marker written as the first line of every CSV artifact.
pub const CSV_SCHEMA_LINE: &str = "# schema=v1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub final_time: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) || steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "time grid needs T > 0 and N >= 1, got T={final_time}, N={steps}"
            )));
        }
        Ok(Self { final_time, steps })
    }

    pub fn step(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        self.final_time * k as f64 / self.steps as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.node(k))
    }

    pub fn refined(&self, factor: usize) -> Self {
        Self { final_time: self.final_time, steps: self.steps * factor }
    }
}

/// Values at the `N + 1` grid nodes; piecewise-linear in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    values: Vec<Vector>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, values: Vec<Vector>) -> Result<Self> {
        if values.len() != grid.steps + 1 {
            return Err(Error::DimensionMismatch {
                context: "trajectory nodes",
                expected: grid.steps + 1,
                found: values.len(),
            });
        }
        let dim = values[0].len();
        for v in &values {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { context: "trajectory value", expected: dim, found: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("trajectory"));
            }
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: Vector) -> Self {
        Self { grid, values: vec![value; grid.steps + 1] }
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self::constant(grid, Vector::zeros(dim))
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> Vector) -> Self {
        Self { grid, values: grid.nodes().map(f).collect() }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vector] {
        &mut self.values
    }

    pub fn value(&self, k: usize) -> &Vector {
        &self.values[k]
    }

    pub fn last(&self) -> &Vector {
        &self.values[self.grid.steps]
    }

    /// Piecewise-linear interpolation, clamped to `[0, T]`.
    pub fn eval(&self, t: f64) -> Vector {
        let n = self.grid.steps;
        let s = (t / self.grid.step()).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n - 1);
        let w = s - k as f64;
        &self.values[k] * (1.0 - w) + &self.values[k + 1] * w
    }

    /// Samples the interpolant on another grid with the same final time.
    pub fn resample(&self, grid: TimeGrid) -> Self {
        Self::from_fn(grid, |t| self.eval(t))
    }

    /// Restriction to a coarser grid whose nodes are a subset of ours.
    pub fn restrict(&self, coarse: TimeGrid) -> Result<Self> {
        if coarse.steps == 0 || !self.grid.steps.is_multiple_of(coarse.steps) {
            return Err(Error::InvalidParameter("coarse grid does not nest".into()));
        }
        let f = self.grid.steps / coarse.steps;
        Ok(Self { grid: coarse, values: (0..=coarse.steps).map(|k| self.values[k * f].clone()).collect() })
    }

    pub fn map(&self, f: impl Fn(&Vector) -> Vector) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(f).collect() }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(&Vector, &Vector) -> Vector) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add_scaled(&self, other: &Self, t: f64) -> Result<Self> {
        self.zip_with(other, |a, b| a + b * t)
    }

    pub fn scale(&self, t: f64) -> Self {
        self.map(|v| v * t)
    }

    /// Nodewise Euclidean pairing `Σ_k ⟨a_k, b_k⟩`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.dot(b)).sum()
    }

    /// Discrete pairing of forward differences `Σ_k τ ⟨Δa_k/τ, Δb_k/τ⟩`.
    pub fn h1_inner(&self, other: &Self) -> f64 {
        let tau = self.grid.step();
        self.values
            .windows(2)
            .zip(other.values.windows(2))
            .map(|(a, b)| (&a[1] - &a[0]).dot(&(&b[1] - &b[0])))
            .sum::<f64>()
            / tau
    }

    pub fn cnorm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Trapezoidal `L²` norm.
    pub fn l2norm(&self) -> f64 {
        let tau = self.grid.step();
        let sq: Vec<f64> = self.values.iter().map(|v| v.norm_squared()).collect();
        let inner: f64 = sq.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
        (tau * inner).sqrt()
    }

    /// `L²` norm of the time derivative of the piecewise-linear interpolant.
    pub fn h1seminorm(&self) -> f64 {
        self.h1_inner(self).sqrt()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidParameter("trajectories live on different grids".into()));
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { context: "trajectory", expected: self.dim(), found: other.dim() });
        }
        Ok(())
    }

    /// CSV with a schema line, a `t,comp_0,...` header and one row per node.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{CSV_SCHEMA_LINE}")?;
        let header: Vec<String> = (0..self.dim()).map(|i| format!("comp_{i}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for (k, v) in self.values.iter().enumerate() {
            write!(w, "{}", fmt_f64(self.grid.node(k)))?;
            for x in v.iter() {
                write!(w, ",{}", fmt_f64(*x))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidParameter(format!("trajectory CSV: {msg}"));
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut saw_header = false;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !saw_header {
                if !line.starts_with("t,") {
                    return Err(bad("missing header"));
                }
                saw_header = true;
                continue;
            }
            let mut fields = line.split(',').map(|f| f.parse::<f64>());
            let t = fields.next().ok_or_else(|| bad("empty row"))?.map_err(|_| bad("bad time"))?;
            let row: std::result::Result<Vec<f64>, _> = fields.collect();
            times.push(t);
            values.push(Vector::from_vec(row.map_err(|_| bad("bad value"))?));
        }
        if times.len() < 2 {
            return Err(bad("needs at least two rows"));
        }
        let grid = TimeGrid::new(*times.last().unwrap(), times.len() - 1)?;
        Self::new(grid, values)
    }
}

/// Round-trippable formatting with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
