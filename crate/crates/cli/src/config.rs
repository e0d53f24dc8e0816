//! Versioned JSON run configuration.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use monoflow_core::control::{OptimizeOptions, RegSchedule, ScheduleStage};
use monoflow_core::homogenized::{make_toy_instance, PlasticityData, ToySizes};
use monoflow_core::presets::{self, VonMisesInstance};
use monoflow_core::{
    FlowRule, LinearMap, Objective, ObjectiveSpec, Observation, ProblemData, RegParams, SymPosDefMap, TimeGrid,
    Trajectory, Vector,
};
use serde::{Deserialize, Serialize};

use crate::exit::CliError;

pub const CONFIG_SCHEMA: &str = "monoflow-config/v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub instance: InstanceSource,
    /// Overrides the rule implied by the instance.
    #[serde(default)]
    pub rule: Option<FlowRule>,
    pub grid: GridConfig,
    #[serde(default)]
    pub load: LoadSpec,
    #[serde(default)]
    pub regularization: Option<RegParams>,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub objective: Option<ObjectiveConfig>,
    #[serde(default)]
    pub optimizer: OptimizeOptions,
    #[serde(default)]
    pub checks: CheckConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    /// Seeded von Mises instance with the shipped layout.
    ToyVonMises {
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_yield")]
        yield_stress: f64,
    },
    /// Generated instance with explicit sizes.
    Toy {
        #[serde(default)]
        seed: Option<u64>,
        sizes: ToySizes,
        c_floor: f64,
        b_floor: f64,
        #[serde(default = "default_yield")]
        yield_stress: f64,
    },
    /// Instance file written by `make-instance`.
    File {
        path: PathBuf,
        #[serde(default = "default_yield")]
        yield_stress: f64,
    },
    /// Explicit `Q`, `R`, `z₀`; the state itself is observed.
    Explicit { q: Vec<Vec<f64>>, r: Vec<Vec<f64>>, z0: Vec<f64> },
}

fn default_yield() -> f64 {
    presets::YIELD_STRESS
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub final_time: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadSpec {
    #[default]
    Zero,
    /// `amplitude · sin(π t / T) · direction`.
    Sine {
        amplitude: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// `t · slope`.
    Ramp { slope: Vec<f64> },
    /// Trajectory CSV on the configured grid.
    Csv { path: PathBuf },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Smoothed,
    Yosida,
    Reference,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// `λ_n = 2⁻ⁿ λ₀` with the admissible `ε_n`, `θ_n`.
    Geometric { lambda0: f64, stages: usize },
    Stages { stages: Vec<ScheduleStage> },
    File { path: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Defaults to the instance's preset targets, or zero.
    #[serde(default)]
    pub u_target: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma_target: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub directions: usize,
    pub fd_step: f64,
    pub gradient_tol: f64,
    pub ssc_delta: f64,
    pub ssc_directions: usize,
    /// Optimize before sampling the Hessian quotient.
    pub ssc_optimize_first: bool,
    pub growth_t_max: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            directions: 20,
            fd_step: 1e-5,
            gradient_tol: 1e-6,
            ssc_delta: 1e-3,
            ssc_directions: 20,
            ssc_optimize_first: true,
            growth_t_max: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    /// Refinement factor of the reference grid.
    pub refine: usize,
    pub max_ratio: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambdas: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3], refine: 8, max_ratio: 1.15 }
    }
}

/// Everything a command needs, resolved from a [`RunConfig`].
pub struct Resolved {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub problem: ProblemData,
    pub grid: TimeGrid,
    pub load: Trajectory,
    pub instance: Option<VonMisesInstance>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("invalid config {}: {e}", path.display())))?;
        if config.schema != CONFIG_SCHEMA {
            return Err(config_err(format!(
                "unsupported config schema {:?} (expected {CONFIG_SCHEMA:?})",
                config.schema
            )));
        }
        Ok(config)
    }

    pub fn resolve(self, base_dir: &Path) -> Result<Resolved, CliError> {
        let grid = TimeGrid::new(self.grid.final_time, self.grid.steps).map_err(CliError::config)?;
        let (problem, instance) = self.build_problem(base_dir)?;
        if let Some(p) = &self.regularization {
            p.validate().map_err(CliError::config)?;
        }
        let load = self.build_load(base_dir, grid, problem.control_dim())?;
        Ok(Resolved { config: self, base_dir: base_dir.to_path_buf(), problem, grid, load, instance })
    }

    fn build_problem(&self, base_dir: &Path) -> Result<(ProblemData, Option<VonMisesInstance>), CliError> {
        let inst = match &self.instance {
            InstanceSource::ToyVonMises { seed, yield_stress } => {
                let data = make_toy_instance(seed.unwrap_or(self.seed), presets::sizes(), presets::C_FLOOR, presets::B_FLOOR)
                    .map_err(CliError::config)?;
                VonMisesInstance::from_data(data, *yield_stress)
            }
            InstanceSource::Toy { seed, sizes, c_floor, b_floor, yield_stress } => {
                let data = make_toy_instance(seed.unwrap_or(self.seed), *sizes, *c_floor, *b_floor)
                    .map_err(CliError::config)?;
                instance_from_data(data, *yield_stress)
            }
            InstanceSource::File { path, yield_stress } => {
                let path = base_dir.join(path);
                if !path.exists() {
                    return Err(config_err(format!("instance file not found: {}", path.display())));
                }
                let data = PlasticityData::load_json(&path).map_err(CliError::config)?;
                instance_from_data(data, *yield_stress)
            }
            InstanceSource::Explicit { q, r, z0 } => {
                let q = SymPosDefMap::new(matrix(q, "q")?).map_err(CliError::config)?;
                let rule = self.rule.clone().ok_or_else(|| config_err("explicit instances need a \"rule\""))?;
                let pd = ProblemData::new(q, matrix(r, "r")?, Vector::from_vec(z0.clone()), rule)
                    .map_err(CliError::config)?;
                return Ok((pd, None));
            }
        };
        let mut inst = inst.map_err(CliError::config)?;
        if let Some(rule) = &self.rule {
            let pd = &inst.problem;
            inst.problem = ProblemData::with_gamma(pd.q.clone(), pd.r.clone(), pd.z0.clone(), pd.gamma_q, rule.clone())
                .map_err(CliError::config)?;
        }
        Ok((inst.problem.clone(), Some(inst)))
    }

    fn build_load(&self, base_dir: &Path, grid: TimeGrid, dim: usize) -> Result<Trajectory, CliError> {
        let vector = |v: &[f64], what: &str| {
            if v.len() != dim {
                return Err(config_err(format!("{what} has length {} but the control dimension is {dim}", v.len())));
            }
            Ok(Vector::from_row_slice(v))
        };
        let mut load = match &self.load {
            LoadSpec::Zero => Trajectory::zeros(grid, dim),
            LoadSpec::Sine { amplitude, direction: None } if matches!(self.instance, InstanceSource::ToyVonMises { .. }) => {
                presets::sine_load(grid, *amplitude)
            }
            LoadSpec::Sine { amplitude, direction } => {
                let dir = match direction {
                    Some(d) => vector(d, "load direction")?,
                    None => Vector::from_element(dim, 1.0),
                };
                let t_end = grid.final_time;
                Trajectory::from_fn(grid, |t| &dir * (amplitude * (PI * t / t_end).sin()))
            }
            LoadSpec::Ramp { slope } => {
                let s = vector(slope, "load slope")?;
                Trajectory::from_fn(grid, |t| &s * t)
            }
            LoadSpec::Csv { path } => {
                let path = base_dir.join(path);
                let file = fs::File::open(&path)
                    .map_err(|e| config_err(format!("cannot open load {}: {e}", path.display())))?;
                let tr = Trajectory::read_csv(std::io::BufReader::new(file)).map_err(CliError::config)?;
                if tr.grid() != &grid || tr.dim() != dim {
                    return Err(config_err(format!("load {} does not match the grid or control dimension", path.display())));
                }
                tr
            }
        };
        // the sine vanishes at t = 0 only up to rounding
        load.values_mut()[0].iter_mut().for_each(|x| {
            if x.abs() < 1e-300 {
                *x = 0.0
            }
        });
        Ok(load)
    }
}

fn instance_from_data(data: PlasticityData, yield_stress: f64) -> monoflow_core::Result<VonMisesInstance> {
    VonMisesInstance::from_data(data, yield_stress)
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<LinearMap, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(config_err(format!("matrix {name} must be a non-empty rectangular array")));
    }
    Ok(LinearMap::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl Resolved {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn reg_params(&self) -> Result<RegParams, CliError> {
        self.config.regularization.ok_or_else(|| config_err("this command needs \"regularization\""))
    }

    pub fn objective(&self) -> Result<Objective, CliError> {
        let cfg = self.config.objective.as_ref().ok_or_else(|| config_err("this command needs \"objective\""))?;
        let (obs, preset) = match &self.instance {
            Some(inst) => {
                let preset = inst.objective(cfg.alpha, cfg.beta, cfg.gamma).map_err(CliError::config)?;
                (preset.obs.clone(), Some(preset.spec))
            }
            None => (Observation::state(self.problem.state_dim(), self.problem.control_dim()), None),
        };
        let u_default = || preset.as_ref().map_or_else(|| vec![0.0; obs.disp_z.nrows()], |s| s.u_target.clone());
        let s_default = || preset.as_ref().map_or_else(|| vec![0.0; obs.stress_z.nrows()], |s| s.sigma_target.clone());
        let spec = ObjectiveSpec {
            alpha: cfg.alpha,
            beta: cfg.beta,
            gamma: cfg.gamma,
            u_target: cfg.u_target.clone().unwrap_or_else(u_default),
            sigma_target: cfg.sigma_target.clone().unwrap_or_else(s_default),
        };
        Objective::new(spec, obs).map_err(CliError::config)
    }

    pub fn schedule(&self) -> Result<RegSchedule, CliError> {
        let q_norm = self.problem.q.max_eig_estimate().map_err(CliError::solver)?;
        let t_end = self.grid.final_time;
        let schedule = match &self.config.schedule {
            None => RegSchedule::default_for(t_end, q_norm),
            Some(ScheduleSpec::Geometric { lambda0, stages }) => RegSchedule::geometric(*lambda0, *stages, t_end, q_norm),
            Some(ScheduleSpec::Stages { stages }) => Ok(RegSchedule { stages: stages.clone() }),
            Some(ScheduleSpec::File { path }) => {
                let path = self.base_dir.join(path);
                let text = fs::read_to_string(&path)
                    .map_err(|e| config_err(format!("cannot read schedule {}: {e}", path.display())))?;
                let stages: Vec<ScheduleStage> = serde_json::from_str(&text)
                    .map_err(|e| config_err(format!("invalid schedule {}: {e}", path.display())))?;
                Ok(RegSchedule { stages })
            }
        }
        .map_err(CliError::config)?;
        schedule.validate(t_end, q_norm).map_err(CliError::config)?;
        Ok(schedule)
    }
}
