//! Maximal monotone flow rules and their regularizations.
//!
//! Each [`FlowRule`] exposes the resolvent `(I + λA)⁻¹`, the Yosida map
//! `A_λ = (I − R_λ)/λ`, the minimal section and a C² smoothed Yosida map
//! `A_{λ,ε}` with exact first and second derivatives.
//!
//! * `VonMises`: `A = ∂I_K` with `K = {τ : |τᴰ| ≤ σ₀}` imposed blockwise on
//!   flattened `d × d` symmetric matrices. The smoothed map is
//!   `(1/λ) max_ε(1 − σ₀/|τᴰ|) τᴰ`.
//! * `Box`: `A = ∂I_[lo, hi]`, smoothed componentwise as
//!   `(1/λ) (max_ε(h − hi) − max_ε(lo − h))`.
//! * `Linear`: `A(h) = κ h`. It is already smooth, so the smoothed map is `A`
//!   itself and ignores the regularization parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{LinearMap, Vector};
use crate::smoothing::{smoothed_max, smoothed_max_d1, smoothed_max_d2, MAX_EPSILON};

/// Absolute tolerance for membership in `D(A)`.
pub const DOMAIN_TOL: f64 = 1e-10;

/// Yosida parameter `λ` and smoothing parameter `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    pub lambda: f64,
    pub epsilon: f64,
}

impl RegParams {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        let p = Self { lambda, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= MAX_EPSILON) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1/2], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VonMises {
    pub yield_stress: f64,
    pub dim: usize,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowRule {
    VonMises(VonMises),
    Box(BoxBounds),
    Linear { kappa: f64 },
}

impl FlowRule {
    pub fn von_mises(yield_stress: f64, dim: usize, points: usize) -> Result<Self> {
        let rule = FlowRule::VonMises(VonMises { yield_stress, dim, points });
        rule.validate()?;
        Ok(rule)
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let rule = FlowRule::Box(BoxBounds { lo, hi });
        rule.validate()?;
        Ok(rule)
    }

    pub fn linear(kappa: f64) -> Result<Self> {
        let rule = FlowRule::Linear { kappa };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FlowRule::VonMises(vm) => {
                if !(vm.yield_stress > 0.0) || !(vm.dim == 2 || vm.dim == 3) || vm.points == 0 {
                    return Err(Error::InvalidParameter(format!("invalid von Mises rule {vm:?}")));
                }
            }
            FlowRule::Box(b) => {
                if b.lo.len() != b.hi.len() || b.lo.is_empty() {
                    return Err(Error::InvalidParameter("box bounds must have equal nonzero length".into()));
                }
                if b.lo.iter().zip(&b.hi).any(|(l, h)| !(l <= h)) {
                    return Err(Error::InvalidParameter("box bounds require lo <= hi".into()));
                }
            }
            FlowRule::Linear { kappa } => {
                if !(*kappa >= 0.0 && kappa.is_finite()) {
                    return Err(Error::InvalidParameter(format!("kappa must be >= 0, got {kappa}")));
                }
            }
        }
        Ok(())
    }

    /// Dimension of the space the rule acts on, if fixed by the rule.
    pub fn space_dim(&self) -> Option<usize> {
        match self {
            FlowRule::VonMises(vm) => Some(vm.points * vm.dim * vm.dim),
            FlowRule::Box(b) => Some(b.lo.len()),
            FlowRule::Linear { .. } => None,
        }
    }

    /// `(I + λA)⁻¹ h`.
    pub fn resolvent(&self, h: &Vector, lambda: f64) -> Vector {
        match self {
            FlowRule::VonMises(vm) => vm.map_blocks(h, |b, out| {
                let dev = deviator(b, vm.dim);
                let n = frob(&dev);
                let shrink = if n > vm.yield_stress { 1.0 - vm.yield_stress / n } else { 0.0 };
                for i in 0..b.len() {
                    out[i] = b[i] - shrink * dev[i];
                }
            }),
            FlowRule::Box(bx) => Vector::from_fn(h.len(), |i, _| h[i].clamp(bx.lo[i], bx.hi[i])),
            FlowRule::Linear { kappa } => h / (1.0 + lambda * kappa),
        }
    }

    /// One element of the generalized Jacobian of the resolvent at `h`.
    pub fn resolvent_derivative(&self, h: &Vector, lambda: f64) -> LinearMap {
        let m = h.len();
        match self {
            FlowRule::VonMises(vm) => {
                let bs = vm.block_size();
                let mut jac = LinearMap::identity(m, m);
                for (k, b) in h.as_slice().chunks(bs).enumerate() {
                    let dev = deviator(b, vm.dim);
                    let n = frob(&dev);
                    if n <= vm.yield_stress {
                        continue;
                    }
                    let shrink = 1.0 - vm.yield_stress / n;
                    let curv = vm.yield_stress / n.powi(3);
                    let devm = deviator_matrix(vm.dim);
                    for i in 0..bs {
                        for j in 0..bs {
                            jac[(k * bs + i, k * bs + j)] -= shrink * devm[(i, j)] + curv * dev[i] * dev[j];
                        }
                    }
                }
                jac
            }
            FlowRule::Box(bx) => LinearMap::from_diagonal(&Vector::from_fn(m, |i, _| {
                if h[i] > bx.lo[i] && h[i] < bx.hi[i] {
                    1.0
                } else {
                    0.0
                }
            })),
            FlowRule::Linear { kappa } => LinearMap::identity(m, m) / (1.0 + lambda * kappa),
        }
    }

    /// `A_λ(h) = (h − R_λ h)/λ`.
    pub fn yosida(&self, h: &Vector, lambda: f64) -> Vector {
        match self {
            FlowRule::VonMises(vm) => vm.map_blocks(h, |b, out| {
                let dev = deviator(b, vm.dim);
                let n = frob(&dev);
                let f = if n > 0.0 { (1.0 - vm.yield_stress / n).max(0.0) / lambda } else { 0.0 };
                for i in 0..b.len() {
                    out[i] = f * dev[i];
                }
            }),
            FlowRule::Linear { kappa } => h * (kappa / (1.0 + lambda * kappa)),
            FlowRule::Box(_) => (h - self.resolvent(h, lambda)) / lambda,
        }
    }

    /// Generalized Jacobian of the Yosida map, `(I − D R_λ)/λ`.
    pub fn yosida_derivative(&self, h: &Vector, lambda: f64) -> LinearMap {
        let m = h.len();
        (LinearMap::identity(m, m) - self.resolvent_derivative(h, lambda)) / lambda
    }

    /// Euclidean distance from `h` to `D(A)`.
    pub fn distance_to_domain(&self, h: &Vector) -> f64 {
        match self {
            FlowRule::Linear { .. } => 0.0,
            _ => (h - self.resolvent(h, 1.0)).norm(),
        }
    }

    /// Least-norm element of `A(h)`.
    pub fn minimal_section(&self, h: &Vector) -> Result<Vector> {
        match self {
            FlowRule::Linear { kappa } => Ok(h * *kappa),
            _ => {
                let distance = self.distance_to_domain(h);
                if distance > DOMAIN_TOL {
                    Err(Error::OutsideDomain { distance })
                } else {
                    Ok(Vector::zeros(h.len()))
                }
            }
        }
    }

    /// `A_{λ,ε}(h)`.
    pub fn smoothed_eval(&self, h: &Vector, p: &RegParams) -> Vector {
        match self {
            FlowRule::VonMises(vm) => vm.map_blocks(h, |b, out| {
                let dev = deviator(b, vm.dim);
                let n = frob(&dev);
                if n == 0.0 {
                    return;
                }
                let f = smoothed_max(1.0 - vm.yield_stress / n, p.epsilon) / p.lambda;
                for i in 0..b.len() {
                    out[i] = f * dev[i];
                }
            }),
            FlowRule::Box(bx) => Vector::from_fn(h.len(), |i, _| {
                (smoothed_max(h[i] - bx.hi[i], p.epsilon) - smoothed_max(bx.lo[i] - h[i], p.epsilon)) / p.lambda
            }),
            FlowRule::Linear { kappa } => h * *kappa,
        }
    }

    /// `A_{λ,ε}'(h) dir`.
    pub fn smoothed_jvp(&self, h: &Vector, dir: &Vector, p: &RegParams) -> Vector {
        match self {
            FlowRule::VonMises(vm) => {
                let bs = vm.block_size();
                let mut out = Vector::zeros(h.len());
                for (k, (b, d)) in h.as_slice().chunks(bs).zip(dir.as_slice().chunks(bs)).enumerate() {
                    let dev = deviator(b, vm.dim);
                    let n = frob(&dev);
                    if n == 0.0 {
                        continue;
                    }
                    let ddev = deviator(d, vm.dim);
                    let arg = 1.0 - vm.yield_stress / n;
                    let m0 = smoothed_max(arg, p.epsilon);
                    let m1 = smoothed_max_d1(arg, p.epsilon);
                    let c = m1 * vm.yield_stress / n.powi(3) * dot(&dev, &ddev);
                    for i in 0..bs {
                        out[k * bs + i] = (c * dev[i] + m0 * ddev[i]) / p.lambda;
                    }
                }
                out
            }
            FlowRule::Box(bx) => Vector::from_fn(h.len(), |i, _| {
                (smoothed_max_d1(h[i] - bx.hi[i], p.epsilon) + smoothed_max_d1(bx.lo[i] - h[i], p.epsilon))
                    * dir[i]
                    / p.lambda
            }),
            FlowRule::Linear { kappa } => dir * *kappa,
        }
    }

    /// Dense Jacobian of the smoothed map; symmetric for every rule.
    pub fn smoothed_derivative(&self, h: &Vector, p: &RegParams) -> LinearMap {
        let m = h.len();
        match self {
            FlowRule::VonMises(vm) => {
                let bs = vm.block_size();
                let devm = deviator_matrix(vm.dim);
                let mut jac = LinearMap::zeros(m, m);
                for (k, b) in h.as_slice().chunks(bs).enumerate() {
                    let dev = deviator(b, vm.dim);
                    let n = frob(&dev);
                    if n == 0.0 {
                        continue;
                    }
                    let arg = 1.0 - vm.yield_stress / n;
                    let m0 = smoothed_max(arg, p.epsilon) / p.lambda;
                    let c = smoothed_max_d1(arg, p.epsilon) * vm.yield_stress / n.powi(3) / p.lambda;
                    for i in 0..bs {
                        for j in 0..bs {
                            jac[(k * bs + i, k * bs + j)] = c * dev[i] * dev[j] + m0 * devm[(i, j)];
                        }
                    }
                }
                jac
            }
            FlowRule::Box(_) | FlowRule::Linear { .. } => {
                let ones = Vector::from_element(m, 1.0);
                LinearMap::from_diagonal(&self.smoothed_jvp(h, &ones, p))
            }
        }
    }

    /// `A_{λ,ε}''(h)[h1, h2]`.
    pub fn smoothed_hvp(&self, h: &Vector, h1: &Vector, h2: &Vector, p: &RegParams) -> Vector {
        match self {
            FlowRule::VonMises(vm) => {
                let bs = vm.block_size();
                let s0 = vm.yield_stress;
                let mut out = Vector::zeros(h.len());
                let blocks = h
                    .as_slice()
                    .chunks(bs)
                    .zip(h1.as_slice().chunks(bs))
                    .zip(h2.as_slice().chunks(bs));
                for (k, ((b, a1), a2)) in blocks.enumerate() {
                    let dev = deviator(b, vm.dim);
                    let n = frob(&dev);
                    if n == 0.0 {
                        continue;
                    }
                    let d1 = deviator(a1, vm.dim);
                    let d2 = deviator(a2, vm.dim);
                    let arg = 1.0 - s0 / n;
                    let m1 = smoothed_max_d1(arg, p.epsilon);
                    let m2 = smoothed_max_d2(arg, p.epsilon);
                    let t1 = dot(&dev, &d1);
                    let t2 = dot(&dev, &d2);
                    let e12 = dot(&d1, &d2);
                    let pre = s0 / (p.lambda * n.powi(3));
                    let c_dev = m2 * s0 / n.powi(3) * t1 * t2 + m1 * (-3.0 / (n * n) * t1 * t2 + e12);
                    for i in 0..bs {
                        out[k * bs + i] = pre * (c_dev * dev[i] + m1 * (t1 * d2[i] + t2 * d1[i]));
                    }
                }
                out
            }
            FlowRule::Box(bx) => Vector::from_fn(h.len(), |i, _| {
                (smoothed_max_d2(h[i] - bx.hi[i], p.epsilon) - smoothed_max_d2(bx.lo[i] - h[i], p.epsilon))
                    * h1[i]
                    * h2[i]
                    / p.lambda
            }),
            FlowRule::Linear { .. } => Vector::zeros(h.len()),
        }
    }
}

impl VonMises {
    pub fn block_size(&self) -> usize {
        self.dim * self.dim
    }

    fn map_blocks(&self, h: &Vector, f: impl Fn(&[f64], &mut [f64])) -> Vector {
        let bs = self.block_size();
        let mut out = Vector::zeros(h.len());
        for (b, o) in h.as_slice().chunks(bs).zip(out.as_mut_slice().chunks_mut(bs)) {
            f(b, o);
        }
        out
    }

    /// Checks that every block is a symmetric matrix up to `1e-12`.
    pub fn check_symmetric(&self, h: &Vector) -> Result<()> {
        let d = self.dim;
        for b in h.as_slice().chunks(self.block_size()) {
            for i in 0..d {
                for j in 0..i {
                    if (b[i * d + j] - b[j * d + i]).abs() > 1e-12 {
                        return Err(Error::InvalidParameter("von Mises block is not symmetric".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Traceless part of a flattened `d × d` matrix.
pub fn deviator(block: &[f64], d: usize) -> Vec<f64> {
    let tr: f64 = (0..d).map(|i| block[i * d + i]).sum();
    let mut out = block.to_vec();
    for i in 0..d {
        out[i * d + i] -= tr / d as f64;
    }
    out
}

/// Matrix of the deviator projection on flattened `d × d` matrices.
fn deviator_matrix(d: usize) -> LinearMap {
    let bs = d * d;
    let mut m = LinearMap::identity(bs, bs);
    for i in 0..d {
        for j in 0..d {
            m[(i * d + i, j * d + j)] -= 1.0 / d as f64;
        }
    }
    m
}

fn frob(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
