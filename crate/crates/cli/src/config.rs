//! Run configuration. Relative paths resolve against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use safe_field_core::basis::{BasisMap, GainBasis};
use safe_field_core::clfcbf::Dynamics;
use safe_field_core::io::read_json;
use safe_field_core::measurement::{GridSpec, UncertaintyBounds};
use safe_field_core::planning::PlanMode;
use safe_field_core::simulation::{Integrator, SensorModel, SimConfig};
use safe_field_core::synthesis::SynthesisConfig;
use safe_field_lp::{Backend, SolverOptions};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: PlanMode,
    #[serde(default)]
    pub seed: u64,
    /// Output directory. Defaults to `out/` next to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub verification: VerificationSection,
    #[serde(default)]
    pub field: FieldSection,
}

fn default_mode() -> PlanMode {
    PlanMode::Stabilize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Highs,
    Simplex,
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub alpha_v: f64,
    pub alpha_h: f64,
    pub epsilon: f64,
    pub sigma_m: f64,
    /// Grid points per axis.
    pub grid_n: usize,
    /// Grid extent per axis.
    pub grid_width: f64,
    #[serde(default = "default_basis")]
    pub basis: Vec<BasisMap>,
    #[serde(default = "one")]
    pub omega_clf: f64,
    #[serde(default = "one")]
    pub omega_cbf: f64,
    #[serde(default = "default_cap")]
    pub margin_cap: f64,
    #[serde(default)]
    pub gain_bound: Option<f64>,
    #[serde(default = "yes")]
    pub signed_goal_margin: bool,
    #[serde(default = "yes")]
    pub regularize: bool,
    #[serde(default = "default_solver")]
    pub solver: SolverChoice,
}

fn default_basis() -> Vec<BasisMap> {
    GainBasis::default().maps
}
fn one() -> f64 {
    1.0
}
fn default_cap() -> f64 {
    10.0
}
fn yes() -> bool {
    true
}
fn default_solver() -> SolverChoice {
    SolverChoice::Highs
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub dt: f64,
    pub integrator: Integrator,
    pub max_time: f64,
    pub goal_tol: f64,
    pub sensor_refinement: usize,
    pub stop_at_goal: bool,
    /// Initial states. Empty means the environment's start.
    pub starts: Vec<Vec<f64>>,
    /// Named sensor models; every one is simulated unless `--sensor` picks one.
    pub sensors: BTreeMap<String, SensorModel>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            dt: sim.dt,
            integrator: sim.integrator,
            max_time: sim.max_time,
            goal_tol: sim.goal_tol,
            sensor_refinement: sim.sensor_refinement,
            stop_at_goal: sim.stop_at_goal,
            starts: Vec::new(),
            sensors: BTreeMap::from([("delta".to_string(), SensorModel::Delta)]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationSection {
    /// Interior samples per cell on top of the vertices.
    pub interior: usize,
}

impl Default for VerificationSection {
    fn default() -> Self {
        Self { interior: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsPair {
    pub epsilon: f64,
    pub sigma_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    /// Lattice points per axis over each cell's bounding box.
    pub resolution: usize,
    /// Cells to export. Empty means every synthesized cell.
    pub cells: Vec<usize>,
    /// Name of the sensor model used to evaluate the fields.
    pub sensor: String,
    /// Extra bound settings; the listed cells are re-synthesized under each.
    pub comparisons: Vec<BoundsPair>,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            resolution: 15,
            cells: Vec::new(),
            sensor: "delta".into(),
            comparisons: Vec::new(),
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub sigma_m: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub environment: PathBuf,
    pub out: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let mut run: RunConfig = read_json(path).map_err(|e| CliError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(s) = overrides.seed {
            run.seed = s;
        }
        if let Some(e) = overrides.epsilon {
            run.synthesis.epsilon = e;
        }
        if let Some(s) = overrides.sigma_m {
            run.synthesis.sigma_m = s;
        }
        let out = match (&overrides.out, &run.output) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => base.join(o),
            (None, None) => base.join("out"),
        };
        let loaded = Self {
            environment: base.join(&run.environment),
            run,
            out,
        };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<(), CliError> {
        let s = &self.run.synthesis;
        let bad = |m: String| Err(CliError::Config(m));
        for (name, v) in [
            ("alpha_v", s.alpha_v),
            ("alpha_h", s.alpha_h),
            ("epsilon", s.epsilon),
            ("sigma_m", s.sigma_m),
            ("grid_width", s.grid_width),
            ("margin_cap", s.margin_cap),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("synthesis.{name} must be positive and finite"));
            }
        }
        if s.grid_n < 2 {
            return bad("synthesis.grid_n must be at least 2".into());
        }
        if s.basis.is_empty() {
            return bad("synthesis.basis must not be empty".into());
        }
        if self.run.simulation.sensors.is_empty() {
            return bad("simulation.sensors must not be empty".into());
        }
        self.sim_config(&SensorModel::Delta)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self, d: usize) -> Result<GridSpec, CliError> {
        let s = &self.run.synthesis;
        GridSpec::new(vec![s.grid_n; d], vec![s.grid_width; d])
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn synthesis_config(&self, d: usize) -> Result<SynthesisConfig, CliError> {
        let s = &self.run.synthesis;
        let backend = match s.solver {
            SolverChoice::Highs => Backend::Highs,
            SolverChoice::Simplex => Backend::DenseSimplex,
            SolverChoice::Auto => Backend::Auto,
        };
        Ok(SynthesisConfig {
            dynamics: Dynamics::single_integrator(d),
            alpha_v: s.alpha_v,
            alpha_h: s.alpha_h,
            bounds: UncertaintyBounds {
                epsilon: s.epsilon,
                sigma_m: s.sigma_m,
            },
            grid: self.grid(d)?,
            basis: GainBasis {
                maps: s.basis.clone(),
            },
            omega_clf: s.omega_clf,
            omega_cbf: s.omega_cbf,
            margin_cap: s.margin_cap,
            gain_bound: s.gain_bound,
            signed_goal_margin: s.signed_goal_margin,
            regularize: s.regularize,
            solver: SolverOptions::with_backend(backend),
        })
    }

    pub fn sim_config(&self, sensor: &SensorModel) -> SimConfig {
        let s = &self.run.simulation;
        SimConfig {
            dt: s.dt,
            integrator: s.integrator,
            max_time: s.max_time,
            goal_tol: s.goal_tol,
            sensor: sensor.clone(),
            sensor_refinement: s.sensor_refinement,
            stop_at_goal: s.stop_at_goal,
            seed: self.run.seed,
        }
    }

    /// Sensors to simulate: all configured ones, or the one named.
    pub fn sensors(&self, pick: Option<&str>) -> Result<Vec<(String, SensorModel)>, CliError> {
        let all = &self.run.simulation.sensors;
        match pick {
            None => Ok(all.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
            Some(name) => all
                .get(name)
                .map(|m| vec![(name.to_string(), m.clone())])
                .ok_or_else(|| CliError::Config(format!("no sensor named `{name}` in the config"))),
        }
    }
}
