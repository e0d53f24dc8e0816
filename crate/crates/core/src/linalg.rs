//! Dense linear-algebra substrate.
//!
//! Vectors and general linear maps are plain `nalgebra` dynamic types; the only
//! wrapper is [`SymPosDefMap`], which checks symmetry once and caches a
//! Cholesky factor for repeated solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type LinearMap = DMatrix<f64>;

/// Relative symmetry tolerance, measured against the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Iteration cap shared by the power and inverse power iterations.
pub const EIG_MAX_ITER: usize = 10_000;

/// A symmetric positive definite map with a cached Cholesky factorization.
#[derive(Clone, Debug)]
pub struct SymPosDefMap {
    matrix: LinearMap,
    chol: Cholesky<f64, Dyn>,
}

impl SymPosDefMap {
    pub fn new(matrix: LinearMap) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                context: "SymPosDefMap (square)",
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidParameter("empty matrix".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SymPosDefMap"));
        }
        let scale = matrix.amax();
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NonSpd(format!("asymmetry {asym:e} exceeds tolerance")));
        }
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| Error::NonSpd("Cholesky factorization failed".into()))?;
        Ok(Self { matrix, chol })
    }

    /// Symmetrizes `matrix` before the checks; for products that are symmetric
    /// only up to rounding.
    pub fn new_symmetrized(matrix: LinearMap) -> Result<Self> {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        Self::new(sym)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &LinearMap {
        &self.matrix
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        &self.matrix * x
    }

    pub fn solve(&self, rhs: &Vector) -> Result<Vector> {
        check_dim("solve_spd", self.dim(), rhs.len())?;
        Ok(self.chol.solve(rhs))
    }

    pub fn solve_matrix(&self, rhs: &LinearMap) -> Result<LinearMap> {
        check_dim("solve_spd", self.dim(), rhs.nrows())?;
        Ok(self.chol.solve(rhs))
    }

    pub fn inverse(&self) -> LinearMap {
        self.chol.inverse()
    }

    /// Smallest eigenvalue by inverse subspace iteration with a Rayleigh-Ritz
    /// step on a block of up to eight vectors, which resolves clustered
    /// eigenvalues at the bottom of the spectrum.
    pub fn min_eig_estimate(&self) -> Result<f64> {
        let n = self.dim();
        let k = n.min(8);
        let upper = gershgorin_upper(&self.matrix);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut x = LinearMap::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
        for _ in 0..EIG_MAX_ITER {
            let y = self.chol.solve(&x).qr().q();
            let my = &self.matrix * &y;
            let ritz = nalgebra::SymmetricEigen::new(y.transpose() * &my);
            let j = ritz.eigenvalues.imin();
            let mu = ritz.eigenvalues[j];
            let v = &y * ritz.eigenvectors.column(j);
            let resid = (&self.matrix * &v - &v * mu).norm();
            x = y * ritz.eigenvectors;
            if resid <= 1e-9 * upper {
                return Ok(mu);
            }
        }
        Err(Error::NoConvergence { iterations: EIG_MAX_ITER })
    }

    /// Largest eigenvalue, which is also the operator norm.
    pub fn max_eig_estimate(&self) -> Result<f64> {
        max_eig_symmetric(&self.matrix)
    }

    /// The weighted inner product `<a, M^{-1} b>`.
    pub fn inverse_weighted_inner(&self, a: &Vector, b: &Vector) -> Result<f64> {
        Ok(a.dot(&self.solve(b)?))
    }
}

/// Solves `M x = rhs` for an SPD map.
pub fn solve_spd(map: &SymPosDefMap, rhs: &Vector) -> Result<Vector> {
    map.solve(rhs)
}

pub fn min_eig_estimate(map: &SymPosDefMap) -> Result<f64> {
    map.min_eig_estimate()
}

/// Largest eigenvalue of a symmetric matrix by power iteration on the
/// shifted, positive semidefinite matrix `M + s I`.
pub fn max_eig_symmetric(m: &LinearMap) -> Result<f64> {
    let n = m.nrows();
    let shift = gershgorin_upper(m);
    let mut x = start_vector(n);
    let mut mu_prev = f64::NAN;
    for _ in 0..EIG_MAX_ITER {
        let y = m * &x + &x * shift;
        let norm = y.norm();
        if norm == 0.0 {
            return Ok(-shift);
        }
        x = y / norm;
        let mx = m * &x;
        let mu = x.dot(&mx);
        let resid = (&mx - &x * mu).norm();
        if resid <= 1e-9 * shift.max(f64::MIN_POSITIVE) || (mu - mu_prev).abs() <= 1e-15 * shift {
            return Ok(mu);
        }
        mu_prev = mu;
    }
    Err(Error::NoConvergence { iterations: EIG_MAX_ITER })
}

/// Smallest eigenvalue of a symmetric matrix by a full eigendecomposition.
pub fn min_eig_dense(m: &LinearMap) -> f64 {
    nalgebra::SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}

/// Upper bound on the spectral radius (maximum absolute row sum).
pub fn gershgorin_upper(m: &LinearMap) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn start_vector(n: usize) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let v = Vector::from_fn(n, |_, _| rng.random_range(0.5..1.5));
    let norm = v.norm();
    v / norm
}

/// Thomas algorithm for a tridiagonal system. `sub[i]` couples row `i + 1` to
/// row `i`, `sup[i]` couples row `i` to row `i + 1`.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &Vector) -> Result<Vector> {
    let n = diag.len();
    check_dim("solve_tridiagonal (rhs)", n, rhs.len())?;
    if n == 0 {
        return Ok(Vector::zeros(0));
    }
    check_dim("solve_tridiagonal (sub)", n - 1, sub.len())?;
    check_dim("solve_tridiagonal (sup)", n - 1, sup.len())?;
    let scale = diag
        .iter()
        .chain(sub)
        .chain(sup)
        .fold(0.0_f64, |a, v| a.max(v.abs()));
    let tiny = f64::EPSILON * scale.max(f64::MIN_POSITIVE);

    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() <= tiny {
        return Err(Error::SingularPivot { index: 0 });
    }
    if n > 1 {
        c[0] = sup[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i - 1] * c[i - 1];
        if pivot.abs() <= tiny {
            return Err(Error::SingularPivot { index: i });
        }
        if i < n - 1 {
            c[i] = sup[i] / pivot;
        }
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / pivot;
    }
    let mut x = Vector::zeros(n);
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// General dense solve by partial-pivot LU; `None` when singular.
pub fn solve_general(a: &LinearMap, rhs: &Vector) -> Option<Vector> {
    a.clone().lu().solve(rhs)
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { context, expected, found })
    } else {
        Ok(())
    }
}

/// Random SPD matrix `X Xᵀ / n + floor I` from a seeded generator.
pub fn random_spd(rng: &mut impl Rng, n: usize, floor: f64) -> LinearMap {
    let x = LinearMap::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut m = &x * x.transpose() / n as f64;
    for i in 0..n {
        m[(i, i)] += floor;
    }
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn seeded_spd(seed: u64, n: usize) -> LinearMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_spd(&mut rng, n, 0.1)
    }

    #[test]
    fn solve_spd_identity_and_diagonal() {
        let id = SymPosDefMap::new(LinearMap::identity(3, 3)).unwrap();
        let x = solve_spd(&id, &Vector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);

        let d = SymPosDefMap::new(LinearMap::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]))).unwrap();
        let x = solve_spd(&d, &Vector::from_vec(vec![2.0, 8.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn solve_spd_random_residual() {
        let m = SymPosDefMap::new(seeded_spd(7, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rhs = Vector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let x = solve_spd(&m, &rhs).unwrap();
        let resid = (m.apply(&x) - &rhs).norm();
        assert!(resid <= 1e-10 * (m.matrix().norm() * x.norm() + rhs.norm()));
    }

    #[test]
    fn rejects_non_spd_and_mismatch() {
        let indefinite = LinearMap::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(SymPosDefMap::new(indefinite), Err(Error::NonSpd(_))));
        let asym = LinearMap::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(SymPosDefMap::new(asym), Err(Error::NonSpd(_))));
        let id = SymPosDefMap::new(LinearMap::identity(3, 3)).unwrap();
        assert!(matches!(
            solve_spd(&id, &Vector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn min_eig_diagonal_identity_and_random() {
        let d = SymPosDefMap::new(LinearMap::from_diagonal(&Vector::from_vec(vec![3.0, 5.0, 9.0]))).unwrap();
        assert!((d.min_eig_estimate().unwrap() - 3.0).abs() <= 1e-6 * 9.0);
        let id = SymPosDefMap::new(LinearMap::identity(5, 5)).unwrap();
        assert!((id.min_eig_estimate().unwrap() - 1.0).abs() <= 1e-6);

        let m = seeded_spd(11, 6);
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let spd = SymPosDefMap::new(m).unwrap();
        assert!((spd.min_eig_estimate().unwrap() - lo).abs() <= 1e-6 * hi);
        assert!((spd.max_eig_estimate().unwrap() - hi).abs() <= 1e-6 * hi);
    }

    #[test]
    fn tridiagonal_laplacian_and_diag() {
        let x = solve_tridiagonal(
            &[-1.0, -1.0],
            &[2.0, 2.0, 2.0],
            &[-1.0, -1.0],
            &Vector::from_vec(vec![1.0, 0.0, 0.0]),
        )
        .unwrap();
        for (a, b) in x.iter().zip([0.75, 0.5, 0.25]) {
            assert!((a - b).abs() < 1e-14);
        }
        let x = solve_tridiagonal(&[0.0], &[2.0, 2.0], &[0.0], &Vector::from_vec(vec![4.0, 4.0])).unwrap();
        assert_eq!(x.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn tridiagonal_random_matches_dense() {
        let n = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sub: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sup: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|_| 2.5 + rng.random_range(0.0..1.0)).collect();
        let rhs = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut dense = LinearMap::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = diag[i];
            if i + 1 < n {
                dense[(i + 1, i)] = sub[i];
                dense[(i, i + 1)] = sup[i];
            }
        }
        let oracle = dense.lu().solve(&rhs).unwrap();
        let x = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();
        assert!((x - oracle).amax() <= 1e-10);
    }

    #[test]
    fn tridiagonal_singular_pivot() {
        let err = solve_tridiagonal(&[1.0], &[1.0, 1.0], &[1.0], &Vector::from_vec(vec![1.0, 1.0]));
        assert!(matches!(err, Err(Error::SingularPivot { index: 1 })));
    }

    #[test]
    fn inverse_weighted_inner_product() {
        let d = SymPosDefMap::new(LinearMap::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]))).unwrap();
        let a = Vector::from_vec(vec![1.0, 1.0]);
        assert!((d.inverse_weighted_inner(&a, &a).unwrap() - 0.75).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]
            #[test]
            fn solve_then_apply_is_identity(seed in any::<u64>(), n in 1usize..12) {
                let m = SymPosDefMap::new(seeded_spd(seed, n)).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
                let rhs = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let x = m.solve(&rhs).unwrap();
                let resid = (m.apply(&x) - &rhs).norm();
                prop_assert!(resid <= 1e-10 * (m.matrix().norm() * x.norm() + rhs.norm()));
            }

            #[test]
            fn rayleigh_quotient_above_min_eig(seed in any::<u64>(), n in 1usize..10) {
                let m = SymPosDefMap::new(seeded_spd(seed, n)).unwrap();
                let mu = m.min_eig_estimate().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
                let x = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let xx = x.norm_squared();
                prop_assert!(x.dot(&m.apply(&x)) >= mu * xx - 1e-8 * xx);
            }
        }
    }
}
