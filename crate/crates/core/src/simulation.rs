//! Closed-loop simulation: sensed PMFs, controller switching along the plan, and vector
//! field sampling.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ConvexCell, Environment};
use crate::measurement::{blurred_delta_marginals, GridSpec, Marginals, MeasurementError, PmfGrid};
use crate::planning::{ExitAssignment, HighLevelPlan};
use crate::synthesis::CellController;

/// Tolerated barrier value before a step counts as unsafe.
pub const SAFETY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("sensor grid does not match the controller grid: {0}")]
    GridMismatch(String),
    #[error("t = {t:.3}: barrier of facet {facet} in cell {cell} is {h:.3e}")]
    SafetyViolation {
        t: f64,
        cell: usize,
        facet: usize,
        h: f64,
    },
    #[error("t = {t:.3}: state {x:?} left the free space")]
    LeftFreeSpace { t: f64, x: Vec<f64> },
    #[error("no controller for cell {0}")]
    MissingController(usize),
    #[error("initial state {0:?} is not in any plan cell")]
    StartOutsidePlan(Vec<f64>),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SensorModel {
    /// All mass on the grid point nearest to the true displacement.
    Delta,
    /// Delta PMF shifted by `drift` and blurred by an isotropic Gaussian.
    Gaussian { drift: Vec<f64>, variance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub integrator: Integrator,
    pub max_time: f64,
    pub goal_tol: f64,
    pub sensor: SensorModel,
    /// The sensor reports on the controller grid refined by this factor per axis. The
    /// controller acts through per-axis maps, so any refinement is evaluated exactly.
    pub sensor_refinement: usize,
    /// Stop a stabilizing run once the goal tolerance is met.
    pub stop_at_goal: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            integrator: Integrator::Rk4,
            max_time: 60.0,
            goal_tol: 0.05,
            sensor: SensorModel::Delta,
            sensor_refinement: 1,
            stop_at_goal: true,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.goal_tol > 0.0) {
            return bad("goal_tol must be positive");
        }
        if !(self.max_time >= 0.0) {
            return bad("max_time must be non-negative");
        }
        if self.sensor_refinement == 0 {
            return bad("sensor_refinement must be at least 1");
        }
        if let SensorModel::Gaussian { variance, .. } = &self.sensor {
            if !(*variance >= 0.0) {
                return bad("sensor variance must be non-negative");
            }
        }
        Ok(())
    }
}

/// Marginals of the sensed PMF of every landmark of `controller` at state `x`.
pub fn sense(
    controller: &CellController,
    x: &DVector<f64>,
    sensor: &SensorModel,
    refinement: usize,
) -> Result<Vec<Marginals>, MeasurementError> {
    let grid = controller.grid.refined(refinement);
    controller
        .landmarks
        .iter()
        .map(|l| {
            let y = l - x;
            match sensor {
                SensorModel::Delta => blurred_delta_marginals(&grid, y.as_slice(), &[], 0.0),
                SensorModel::Gaussian { drift, variance } => {
                    blurred_delta_marginals(&grid, y.as_slice(), drift, *variance)
                }
            }
        })
        .collect()
}

fn same_support(a: &GridSpec, b: &GridSpec) -> bool {
    a.dim() == b.dim() && a.width.iter().zip(&b.width).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// `u = sum_m sum_i K_{m,i} R_i P_m + K_b`, with each `R_i P_m` computed from the
/// marginals on their own grid.
pub fn control_input(
    controller: &CellController,
    marginals: &[Marginals],
) -> Result<DVector<f64>, SimulationError> {
    if marginals.len() != controller.landmarks.len() {
        return Err(SimulationError::GridMismatch(format!(
            "{} PMFs for {} landmarks",
            marginals.len(),
            controller.landmarks.len()
        )));
    }
    for m in marginals {
        if !same_support(&m.spec, &controller.grid) {
            return Err(SimulationError::GridMismatch(format!(
                "support {:?} vs {:?}",
                m.spec.width, controller.grid.width
            )));
        }
    }
    let features: Vec<_> = marginals.iter().map(|m| controller.basis.features(m)).collect();
    Ok(controller.gains.apply(&features))
}

/// [`control_input`] from full PMFs.
pub fn control_input_pmf(
    controller: &CellController,
    pmfs: &[PmfGrid],
) -> Result<DVector<f64>, SimulationError> {
    let marginals: Vec<_> = pmfs.iter().map(|p| p.marginals()).collect();
    control_input(controller, &marginals)
}

/// Barrier values `h_j(x)` over the obstacle facets of a cell.
pub fn barrier_values(cell: &ConvexCell, exit: &ExitAssignment, x: &DVector<f64>) -> Vec<(usize, f64)> {
    let g = cell.body.evaluate(x);
    exit.obstacle_rows(cell.body.num_rows())
        .into_iter()
        .map(|j| (j, -g[j]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub cell: usize,
    /// Index of the active plan entry.
    pub entry: usize,
    pub v: f64,
    pub min_h: f64,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub reached_goal: bool,
    /// Plan entry switches as `(t, from cell, to cell)`.
    pub switches: Vec<(f64, usize, usize)>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        &self.samples.last().expect("trajectory has samples").x
    }

    pub fn min_barrier(&self) -> f64 {
        self.samples.iter().map(|s| s.min_h).fold(f64::INFINITY, f64::min)
    }

    /// Steps inside one plan entry where `V(t + dt) > V(t) (1 - alpha dt) + tol`, as
    /// `(t, excess)`.
    pub fn clf_decrease_violations(&self, alpha_v: f64, dt: f64, tol: f64) -> Vec<(f64, f64)> {
        self.samples
            .windows(2)
            .filter(|w| w[0].entry == w[1].entry)
            .filter_map(|w| {
                let excess = w[1].v - (w[0].v * (1.0 - alpha_v * dt) + tol);
                (excess > 0.0).then_some((w[0].t, excess))
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimulationError> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.samples.first().map_or(0, |s| s.x.len());
        let nu = self.samples.first().map_or(0, |s| s.u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|q| format!("x{q}")));
        header.extend((1..=nu).map(|a| format!("u{a}")));
        header.extend(["cell_id", "V", "min_h"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let mut rec = vec![format!("{}", s.t)];
            rec.extend(s.x.iter().map(|v| format!("{v}")));
            rec.extend(s.u.iter().map(|v| format!("{v}")));
            rec.push(s.cell.to_string());
            rec.push(format!("{}", s.v));
            rec.push(format!("{}", s.min_h));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> SimulationError {
    SimulationError::Io(std::io::Error::other(e.to_string()))
}

fn step(
    controller: &CellController,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    integrator: Integrator,
) -> DVector<f64> {
    let f = |x: &DVector<f64>| controller.dynamics.rhs(x, u);
    match integrator {
        Integrator::Euler => x + f(x) * dt,
        Integrator::Rk4 => {
            let k1 = f(x);
            let k2 = f(&(x + &k1 * (dt / 2.0)));
            let k3 = f(&(x + &k2 * (dt / 2.0)));
            let k4 = f(&(x + &k3 * dt));
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    }
}

/// Integrates the closed loop from `x0`. The sensed PMFs are held over each step. The
/// active entry advances when its CLF reaches zero, i.e. when the state crosses the exit
/// face.
pub fn run_trajectory(
    env: &Environment,
    plan: &HighLevelPlan,
    controllers: &[CellController],
    config: &SimConfig,
    x0: &DVector<f64>,
) -> Result<Trajectory, SimulationError> {
    config.validate()?;
    let lookup = |cell: usize| {
        controllers
            .iter()
            .find(|c| c.cell_id == cell)
            .ok_or(SimulationError::MissingController(cell))
    };
    for e in &plan.entries {
        lookup(e.cell)?;
    }
    let mut idx = plan
        .entries
        .iter()
        .position(|e| env.cells[e.cell].contains(x0, 1e-9))
        .ok_or_else(|| SimulationError::StartOutsidePlan(x0.iter().cloned().collect()))?;

    let steps = (config.max_time / config.dt).round() as usize;
    let goal_entry = plan.goal_index();
    let mut x = x0.clone();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut switches = Vec::new();
    let mut reached_goal = false;

    for n in 0..=steps {
        let t = n as f64 * config.dt;
        // Hand over once the exit face is crossed; several hand-overs can happen in one
        // step near a vertex shared by short cells.
        for _ in 0..plan.entries.len() {
            let entry = &plan.entries[idx];
            if entry.exit.face.is_none() || entry.exit.clf_value(&x) > 0.0 {
                break;
            }
            match plan.next_index(idx) {
                Some(next) => {
                    switches.push((t, entry.cell, plan.entries[next].cell));
                    idx = next;
                }
                None => break,
            }
        }
        let entry = &plan.entries[idx];
        let cell = &env.cells[entry.cell];
        let controller = lookup(entry.cell)?;

        let h = barrier_values(cell, &entry.exit, &x);
        let (facet, min_h) = h
            .iter()
            .cloned()
            .fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        if min_h < -SAFETY_TOL {
            return Err(SimulationError::SafetyViolation {
                t,
                cell: entry.cell,
                facet,
                h: min_h,
            });
        }
        if env.cells.iter().all(|c| !c.contains(&x, 1e-6)) {
            return Err(SimulationError::LeftFreeSpace {
                t,
                x: x.iter().cloned().collect(),
            });
        }

        let marginals = sense(controller, &x, &config.sensor, config.sensor_refinement)?;
        let u = control_input(controller, &marginals)?;
        samples.push(TrajectorySample {
            t,
            x: x.iter().cloned().collect(),
            u: u.iter().cloned().collect(),
            cell: entry.cell,
            entry: idx,
            v: entry.exit.clf_value(&x),
            min_h,
            h: h.iter().map(|p| p.1).collect(),
        });

        if goal_entry == Some(idx) && (&x - &env.goal).norm() <= config.goal_tol {
            reached_goal = true;
            if config.stop_at_goal {
                break;
            }
        }
        if n == steps {
            break;
        }
        x = step(controller, &x, &u, config.dt, config.integrator);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimulationError::LeftFreeSpace {
                t: t + config.dt,
                x: x.iter().cloned().collect(),
            });
        }
    }
    Ok(Trajectory {
        samples,
        reached_goal,
        switches,
    })
}

/// Control inputs at the in-cell points of a `resolution`-per-axis lattice over the cell's
/// bounding box.
pub fn sample_vector_field(
    cell: &ConvexCell,
    controller: &CellController,
    resolution: usize,
    sensor: &SensorModel,
    refinement: usize,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>, SimulationError> {
    if resolution < 2 {
        return Err(SimulationError::InvalidConfig(
            "vector field resolution must be at least 2".into(),
        ));
    }
    let (lo, hi) = cell.bounding_box();
    let d = lo.len();
    let total = resolution.pow(d as u32);
    let mut out = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut x = DVector::zeros(d);
        for q in (0..d).rev() {
            let i = rem % resolution;
            rem /= resolution;
            x[q] = lo[q] + (hi[q] - lo[q]) * i as f64 / (resolution - 1) as f64;
        }
        if !cell.contains(&x, 1e-9) {
            continue;
        }
        let marginals = sense(controller, &x, sensor, refinement)?;
        out.push((x.clone(), control_input(controller, &marginals)?));
    }
    Ok(out)
}

pub fn write_vector_field_csv<W: Write>(
    field: &[(DVector<f64>, DVector<f64>)],
    out: W,
) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(out);
    if let Some((x, u)) = field.first() {
        let mut header: Vec<String> = (1..=x.len()).map(|q| format!("x{q}")).collect();
        header.extend((1..=u.len()).map(|a| format!("u{a}")));
        w.write_record(&header).map_err(csv_err)?;
    }
    for (x, u) in field {
        let rec: Vec<String> = x.iter().chain(u.iter()).map(|v| format!("{v}")).collect();
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
