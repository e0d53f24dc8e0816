//! Algebraic reduction of homogenized elastoplasticity.
//!
//! With a displacement-to-strain map `E`, elasticity `C`, plastic-strain map
//! `B`, hardening `Bh` and load injection `P`, eliminating displacements and
//! stresses gives
//!
//! ```text
//! G = Eᵀ C E
//! T = Bᵀ C E G⁻¹ Eᵀ C B
//! Q = Bᵀ C B + Bh − T
//! R = Bᵀ C E G⁻¹ P
//! ```
//!
//! so that `Bᵀ Σ − Bh z = R ℓ − Q z` with `Σ = C (E w − B z)` and
//! `w = G⁻¹ (Eᵀ C B z + P ℓ)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, min_eig_dense, random_spd, LinearMap, SymPosDefMap, Vector};
use crate::objective::Observation;

/// Slack on the positivity checks of the assembled operators.
pub const PSD_SLACK: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct PlasticityData {
    /// Displacement DOFs to strain DOFs.
    pub e: LinearMap,
    pub c: SymPosDefMap,
    /// Internal variables to strain DOFs.
    pub b: LinearMap,
    pub bh: SymPosDefMap,
    /// Loads to displacement DOFs; only the macro rows are nonzero.
    pub p: LinearMap,
    /// Average over material points, stress DOFs to one point's stress block.
    pub avg: LinearMap,
    /// The first `macro_dofs` displacement DOFs are macroscopic.
    pub macro_dofs: usize,
    pub points: usize,
    pub block_dim: Option<usize>,
    pub c_floor: f64,
    pub b_floor: f64,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct AssembledOperators {
    pub q: SymPosDefMap,
    pub r: LinearMap,
    /// Factorized `Eᵀ C E`.
    pub g: SymPosDefMap,
    pub t: LinearMap,
}

/// Displacement split and stress recovered from `(z, ℓ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveredState {
    pub u: Vector,
    pub v: Vector,
    pub sigma: Vector,
}

impl PlasticityData {
    pub fn displacement_dofs(&self) -> usize {
        self.e.ncols()
    }

    pub fn strain_dofs(&self) -> usize {
        self.e.nrows()
    }

    pub fn internal_dofs(&self) -> usize {
        self.b.ncols()
    }

    pub fn load_dofs(&self) -> usize {
        self.p.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, s, m) = (self.displacement_dofs(), self.strain_dofs(), self.internal_dofs());
        check_dim("C", s, self.c.dim())?;
        check_dim("B rows", s, self.b.nrows())?;
        check_dim("Bh", m, self.bh.dim())?;
        check_dim("P rows", n, self.p.nrows())?;
        check_dim("avg cols", s, self.avg.ncols())?;
        if self.macro_dofs > n || self.points == 0 || s % self.points != 0 {
            return Err(Error::InvalidParameter("inconsistent DOF layout".into()));
        }
        if self.p.rows(self.macro_dofs, n - self.macro_dofs).amax() != 0.0 {
            return Err(Error::InvalidParameter("loads may only act on macro displacement DOFs".into()));
        }
        for (map, floor) in [(&self.c, self.c_floor), (&self.bh, self.b_floor)] {
            let min_eig = map.min_eig_estimate()?;
            if min_eig < floor * (1.0 - 1e-10) {
                return Err(Error::CoercivityViolated { min_eig, floor });
            }
        }
        Ok(())
    }
}

/// Assembles `Q`, `R` and `T` and checks symmetry and coercivity.
pub fn assemble(data: &PlasticityData) -> Result<AssembledOperators> {
    data.validate()?;
    let ce = data.c.matrix() * &data.e;
    let g = SymPosDefMap::new_symmetrized(data.e.transpose() * &ce)
        .map_err(|_| Error::NonSpd("Eᵀ C E is not positive definite (E rank deficient?)".into()))?;
    // W = Eᵀ C B, so T = Wᵀ G⁻¹ W and R = Wᵀ G⁻¹ P
    let w = ce.transpose() * &data.b;
    let t = w.transpose() * g.solve_matrix(&w)?;
    let r = w.transpose() * g.solve_matrix(&data.p)?;
    let btcb = data.b.transpose() * data.c.matrix() * &data.b;

    let gap = &btcb - &t;
    let gap_min = min_eig_dense(&gap);
    if gap_min < -PSD_SLACK {
        return Err(Error::CoercivityViolated { min_eig: gap_min, floor: -PSD_SLACK });
    }
    let q = SymPosDefMap::new_symmetrized(btcb + data.bh.matrix() - &t)
        .map_err(|_| Error::CoercivityViolated { min_eig: f64::NAN, floor: data.b_floor })?;
    let q_min = q.min_eig_estimate()?;
    if q_min < data.b_floor - PSD_SLACK {
        return Err(Error::CoercivityViolated { min_eig: q_min, floor: data.b_floor - PSD_SLACK });
    }
    Ok(AssembledOperators { q, r, g, t })
}

/// Displacements `w = (u, v)` and stress `Σ` for internal variable `z` and
/// load `ℓ`.
pub fn recover_state(ops: &AssembledOperators, data: &PlasticityData, z: &Vector, load: &Vector) -> Result<RecoveredState> {
    check_dim("recover_state (z)", data.internal_dofs(), z.len())?;
    check_dim("recover_state (load)", data.load_dofs(), load.len())?;
    let bz = &data.b * z;
    let rhs = data.e.transpose() * data.c.apply(&bz) + &data.p * load;
    let w = ops.g.solve(&rhs)?;
    let sigma = data.c.apply(&(&data.e * &w - bz));
    let n = w.len();
    Ok(RecoveredState {
        u: w.rows(0, data.macro_dofs).into_owned(),
        v: w.rows(data.macro_dofs, n - data.macro_dofs).into_owned(),
        sigma,
    })
}

impl AssembledOperators {
    /// Affine maps `z, ℓ ↦ u` and `z, ℓ ↦ avg Σ` used by the tracking terms.
    pub fn observation(&self, data: &PlasticityData) -> Result<Observation> {
        let ctb = data.e.transpose() * data.c.matrix() * &data.b;
        let wz = self.g.solve_matrix(&ctb)?;
        let wl = self.g.solve_matrix(&data.p)?;
        let avg_c = &data.avg * data.c.matrix();
        Ok(Observation {
            disp_z: wz.rows(0, data.macro_dofs).into_owned(),
            disp_l: wl.rows(0, data.macro_dofs).into_owned(),
            stress_z: &avg_c * (&data.e * &wz - &data.b),
            stress_l: &avg_c * (&data.e * &wl),
        })
    }
}

/// Shape of a generated instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySizes {
    pub displacement: usize,
    pub macro_dofs: usize,
    pub strain: usize,
    pub internal: usize,
    pub loads: usize,
    pub points: usize,
    /// When set, strains are flattened symmetric `d × d` blocks per point and
    /// `B` is the identity, as required by the von Mises rule.
    pub block_dim: Option<usize>,
}

impl ToySizes {
    /// Von Mises layout: `points` material points in dimension `d`.
    pub fn von_mises(d: usize, points: usize, displacement: usize, macro_dofs: usize, loads: usize) -> Self {
        let s = points * d * d;
        Self { displacement, macro_dofs, strain: s, internal: s, loads, points, block_dim: Some(d) }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("toy sizes: {m}")));
        if [self.displacement, self.strain, self.internal, self.loads, self.points].contains(&0) {
            return bad("all sizes must be positive");
        }
        if self.loads > self.macro_dofs || self.macro_dofs > self.displacement {
            return bad("need loads <= macro_dofs <= displacement");
        }
        if !self.strain.is_multiple_of(self.points) {
            return bad("strain DOFs must split evenly over points");
        }
        match self.block_dim {
            Some(d) => {
                if self.strain != self.points * d * d || self.internal != self.strain {
                    return bad("von Mises layout needs strain = internal = points * d^2");
                }
                if self.displacement > self.points * d * (d + 1) / 2 {
                    return bad("too many displacement DOFs for a full-rank symmetric E");
                }
            }
            None => {
                if self.displacement > self.strain {
                    return bad("displacement DOFs exceed strain DOFs");
                }
            }
        }
        Ok(())
    }
}

/// Reproducible random instance with coercivity floors `c_floor`, `b_floor`.
pub fn make_toy_instance(seed: u64, sizes: ToySizes, c_floor: f64, b_floor: f64) -> Result<PlasticityData> {
    sizes.validate()?;
    if !(c_floor > 0.0 && b_floor > 0.0) {
        return Err(Error::InvalidParameter("coercivity floors must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ToySizes { displacement: n, strain: s, internal: m, loads: p, points, .. } = sizes;
    let per_point = s / points;

    let (e, c, b, bh) = match sizes.block_dim {
        Some(d) => {
            let (sym, skew) = symmetric_bases(d);
            let nsym = sym.ncols();
            let block = |rng: &mut ChaCha8Rng, floor: f64| {
                let inner = random_spd(rng, nsym, floor);
                let skew_part = floor * (1.0 + rng.random_range(0.0..1.0));
                &sym * inner * sym.transpose() + &skew * skew.transpose() * skew_part
            };
            let c = block_diagonal((0..points).map(|_| block(&mut rng, c_floor)).collect());
            let bh = block_diagonal((0..points).map(|_| block(&mut rng, b_floor)).collect());
            let coeffs = LinearMap::from_fn(points * nsym, n, |_, _| rng.random_range(-1.0..1.0));
            let embed = block_diagonal(vec![sym.clone(); points]);
            (embed * coeffs, c, LinearMap::identity(s, m), bh)
        }
        None => {
            let c = block_diagonal((0..points).map(|_| random_spd(&mut rng, per_point, c_floor)).collect());
            let bh = random_spd(&mut rng, m, b_floor);
            let b = LinearMap::from_fn(s, m, |_, _| rng.random_range(-1.0..1.0));
            let e = LinearMap::from_fn(s, n, |_, _| rng.random_range(-1.0..1.0));
            (e, c, b, bh)
        }
    };
    let mut pm = LinearMap::zeros(n, p);
    for i in 0..p {
        pm[(i, i)] = 1.0;
    }
    let mut avg = LinearMap::zeros(per_point, s);
    for k in 0..points {
        for i in 0..per_point {
            avg[(i, k * per_point + i)] = 1.0 / points as f64;
        }
    }
    Ok(PlasticityData {
        e,
        c: SymPosDefMap::new_symmetrized(c)?,
        b,
        bh: SymPosDefMap::new_symmetrized(bh)?,
        p: pm,
        avg,
        macro_dofs: sizes.macro_dofs,
        points,
        block_dim: sizes.block_dim,
        c_floor,
        b_floor,
        seed: Some(seed),
    })
}

/// Orthonormal bases (Frobenius) of the symmetric and skew-symmetric
/// flattened `d × d` matrices.
fn symmetric_bases(d: usize) -> (LinearMap, LinearMap) {
    let bs = d * d;
    let mut sym = Vec::new();
    let mut skew = Vec::new();
    for i in 0..d {
        for j in 0..=i {
            let mut v = Vector::zeros(bs);
            if i == j {
                v[i * d + i] = 1.0;
                sym.push(v);
            } else {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                v[i * d + j] = h;
                v[j * d + i] = h;
                sym.push(v.clone());
                v[j * d + i] = -h;
                skew.push(v);
            }
        }
    }
    (LinearMap::from_columns(&sym), LinearMap::from_columns(&skew))
}

fn block_diagonal(blocks: Vec<LinearMap>) -> LinearMap {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = LinearMap::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(&b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// On-disk form of [`PlasticityData`]: matrices as nested row-major arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceFile {
    pub schema: String,
    pub seed: Option<u64>,
    pub macro_dofs: usize,
    pub points: usize,
    pub block_dim: Option<usize>,
    pub c_floor: f64,
    pub b_floor: f64,
    pub e: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub bh: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub avg: Vec<Vec<f64>>,
}

pub const INSTANCE_SCHEMA: &str = "monoflow-instance/v1";

fn to_rows(m: &LinearMap) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], name: &str) -> Result<LinearMap> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidParameter(format!("matrix {name} is empty or ragged")));
    }
    Ok(LinearMap::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl PlasticityData {
    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            schema: INSTANCE_SCHEMA.into(),
            seed: self.seed,
            macro_dofs: self.macro_dofs,
            points: self.points,
            block_dim: self.block_dim,
            c_floor: self.c_floor,
            b_floor: self.b_floor,
            e: to_rows(&self.e),
            c: to_rows(self.c.matrix()),
            b: to_rows(&self.b),
            bh: to_rows(self.bh.matrix()),
            p: to_rows(&self.p),
            avg: to_rows(&self.avg),
        }
    }

    pub fn from_file(f: &InstanceFile) -> Result<Self> {
        if f.schema != INSTANCE_SCHEMA {
            return Err(Error::InvalidParameter(format!("unknown instance schema {:?}", f.schema)));
        }
        let data = Self {
            e: from_rows(&f.e, "e")?,
            c: SymPosDefMap::new(from_rows(&f.c, "c")?)?,
            b: from_rows(&f.b, "b")?,
            bh: SymPosDefMap::new(from_rows(&f.bh, "bh")?)?,
            p: from_rows(&f.p, "p")?,
            avg: from_rows(&f.avg, "avg")?,
            macro_dofs: f.macro_dofs,
            points: f.points,
            block_dim: f.block_dim,
            c_floor: f.c_floor,
            b_floor: f.b_floor,
            seed: f.seed,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(&serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }
}
