//! Subcommand implementations. Every output is a deterministic function of the config,
//! the environment file and the seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use safe_field_core::geometry::Environment;
use safe_field_core::io::{load_environment, to_json, ControllerFile};
use safe_field_core::planning::{build_graph, plan_environment, HighLevelPlan};
use safe_field_core::simulation::{
    run_trajectory, sample_vector_field, write_vector_field_csv, SimulationError,
};
use safe_field_core::synthesis::{
    synthesize_entry, synthesize_environment, CellController, SynthesisError,
};
use safe_field_core::verification::{verify_controller, SamplingConfig, VerificationError};
use serde::Serialize;

use crate::config::{LoadedConfig, Overrides};
use crate::CliError;

pub const CONTROLLERS_FILE: &str = "controllers.json";
pub const REPORT_FILE: &str = "report.json";
pub const SIMULATION_FILE: &str = "simulation.json";
pub const FIELD_FILE: &str = "field.json";

#[derive(Debug, Clone)]
pub struct Options {
    pub config: PathBuf,
    pub overrides: Overrides,
    pub cells: Option<Vec<usize>>,
    pub sensor: Option<String>,
}

struct Session {
    cfg: LoadedConfig,
    env: Environment,
    plan: HighLevelPlan,
}

impl Session {
    fn open(options: &Options) -> Result<Self, CliError> {
        let cfg = LoadedConfig::load(&options.config, &options.overrides)?;
        let config = |e: String| CliError::Config(e);
        let env = load_environment(&cfg.environment).map_err(|e| config(e.to_string()))?;
        let graph = build_graph(&env).map_err(|e| config(e.to_string()))?;
        let plan = plan_environment(&env, &graph, cfg.run.mode).map_err(|e| config(e.to_string()))?;
        if let Some(cells) = &options.cells {
            if let Some(c) = cells.iter().find(|&&c| plan.entry_for(c).is_none()) {
                return Err(config(format!("cell {c} is not part of the plan")));
            }
        }
        Ok(Self { cfg, env, plan })
    }

    fn dim(&self) -> usize {
        self.env.cells[0].dim()
    }

    fn controllers(&self) -> Result<Vec<CellController>, CliError> {
        let path = self.cfg.out.join(CONTROLLERS_FILE);
        let controllers = ControllerFile::load(&path)
            .and_then(|f| f.to_controllers(&path))
            .map_err(|e| CliError::Config(e.to_string()))?;
        for c in &controllers {
            let cell = self.env.cells.get(c.cell_id).ok_or_else(|| {
                CliError::Config(format!("{}: unknown cell {}", path.display(), c.cell_id))
            })?;
            if c.landmark_ids != cell.landmark_ids || c.grid.dim() != cell.dim() {
                return Err(CliError::Config(format!(
                    "{}: controller for cell {} does not match the environment",
                    path.display(),
                    c.cell_id
                )));
            }
        }
        Ok(controllers)
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    fs::File::create(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn is_input_error(e: &SynthesisError) -> bool {
    match e {
        SynthesisError::LandmarkNotVisible { .. }
        | SynthesisError::DimensionMismatch(_)
        | SynthesisError::GoalObservationOffGrid { .. } => true,
        SynthesisError::Cells(list) => list.iter().all(|(_, e)| is_input_error(e)),
        SynthesisError::SynthesisInfeasible { .. } | SynthesisError::SolverFailure { .. } => false,
    }
}

fn synthesis_error(e: SynthesisError) -> CliError {
    if is_input_error(&e) {
        CliError::Config(e.to_string())
    } else {
        CliError::Solver(e.to_string())
    }
}

pub fn synth(options: &Options) -> Result<Vec<CellController>, CliError> {
    let s = Session::open(options)?;
    let config = s.cfg.synthesis_config(s.dim())?;
    let started = Instant::now();
    let controllers = synthesize_environment(&s.env, &s.plan, &config, options.cells.as_deref())
        .map_err(synthesis_error)?;
    log::info!(
        "synthesized {} controller(s) in {:.1} s",
        controllers.len(),
        started.elapsed().as_secs_f64()
    );
    write(
        &s.cfg.out.join(CONTROLLERS_FILE),
        &to_json(&ControllerFile::from_controllers(s.cfg.run.mode, &controllers)),
    )?;
    write(&s.cfg.out.join("plan.json"), &to_json(&s.plan))?;
    Ok(controllers)
}

#[derive(Serialize)]
struct Report<T> {
    pass: bool,
    cells: Vec<T>,
}

pub fn verify(options: &Options) -> Result<(), CliError> {
    let s = Session::open(options)?;
    let sampling = SamplingConfig {
        interior: s.cfg.run.verification.interior,
        seed: s.cfg.run.seed,
    };
    let mut reports = Vec::new();
    for c in s.controllers()? {
        if options.cells.as_ref().is_some_and(|l| !l.contains(&c.cell_id)) {
            continue;
        }
        let report = verify_controller(&c, &s.env.cells[c.cell_id], &sampling).map_err(|e| {
            match e {
                VerificationError::Solver(_) => CliError::Solver(e.to_string()),
                VerificationError::CellMismatch(_) => CliError::Config(e.to_string()),
                _ => CliError::Failure(e.to_string()),
            }
        })?;
        log::info!(
            "cell {}: {} ({} states)",
            report.cell,
            if report.pass { "pass" } else { "FAIL" },
            report.samples
        );
        reports.push(report);
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.cell.to_string())
        .collect();
    write(
        &s.cfg.out.join(REPORT_FILE),
        &to_json(&Report {
            pass: failed.is_empty(),
            cells: reports,
        }),
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "verification failed for cell(s) {}",
            failed.join(", ")
        )))
    }
}

#[derive(Serialize)]
struct RunSummary {
    sensor: String,
    start_index: usize,
    start: Vec<f64>,
    reached_goal: bool,
    final_state: Vec<f64>,
    final_goal_distance: f64,
    min_h: f64,
    duration: f64,
    switches: usize,
    clf_decrease_violations: usize,
    trajectory: Option<String>,
    error: Option<String>,
}

pub fn simulate(options: &Options) -> Result<(), CliError> {
    let s = Session::open(options)?;
    let controllers = s.controllers()?;
    let sim = &s.cfg.run.simulation;
    let d = s.dim();
    let starts: Vec<Vec<f64>> = if sim.starts.is_empty() {
        vec![s.env.start.iter().cloned().collect()]
    } else {
        sim.starts.clone()
    };
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (name, model) in s.cfg.sensors(options.sensor.as_deref())? {
        let config = s.cfg.sim_config(&model);
        for (i, start) in starts.iter().enumerate() {
            if start.len() != d {
                return Err(CliError::Config(format!(
                    "simulation.starts[{i}] has {} coordinates, expected {d}",
                    start.len()
                )));
            }
            let x0 = DVector::from_column_slice(start);
            let mut summary = RunSummary {
                sensor: name.clone(),
                start_index: i,
                start: start.clone(),
                reached_goal: false,
                final_state: start.clone(),
                final_goal_distance: (&x0 - &s.env.goal).norm(),
                min_h: f64::NAN,
                duration: 0.0,
                switches: 0,
                clf_decrease_violations: 0,
                trajectory: None,
                error: None,
            };
            match run_trajectory(&s.env, &s.plan, &controllers, &config, &x0) {
                Ok(traj) => {
                    let file = format!("trajectory_{name}_{i}.csv");
                    traj.write_csv(create(&s.cfg.out.join(&file))?)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    let last = DVector::from_column_slice(traj.final_state());
                    summary.reached_goal = traj.reached_goal;
                    summary.final_state = traj.final_state().to_vec();
                    summary.final_goal_distance = (&last - &s.env.goal).norm();
                    summary.min_h = traj.min_barrier();
                    summary.duration = traj.samples.last().map_or(0.0, |p| p.t);
                    summary.switches = traj.switches.len();
                    summary.clf_decrease_violations = traj
                        .clf_decrease_violations(s.cfg.run.synthesis.alpha_v, config.dt, 1e-4)
                        .len();
                    summary.trajectory = Some(file);
                    if !traj.reached_goal && s.plan.goal_index().is_some() {
                        log::warn!("{name} run {i} did not reach the goal");
                    }
                }
                Err(e @ (SimulationError::SafetyViolation { .. }
                | SimulationError::LeftFreeSpace { .. }
                | SimulationError::Measurement(_))) => {
                    failures.push(format!("{name} run {i}: {e}"));
                    summary.error = Some(e.to_string());
                }
                Err(e) => return Err(CliError::Config(e.to_string())),
            }
            runs.push(summary);
        }
    }
    write(
        &s.cfg.out.join(SIMULATION_FILE),
        &to_json(&Report {
            pass: failures.is_empty(),
            cells: runs,
        }),
    )?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(failures.join("; ")))
    }
}

#[derive(Serialize)]
struct FieldSummary {
    cell: usize,
    epsilon: f64,
    sigma_m: f64,
    objective: f64,
    points: usize,
    file: String,
}

pub fn field(options: &Options) -> Result<(), CliError> {
    let s = Session::open(options)?;
    let controllers = s.controllers()?;
    let section = &s.cfg.run.field;
    let model = s
        .cfg
        .run
        .simulation
        .sensors
        .get(&section.sensor)
        .cloned()
        .ok_or_else(|| CliError::Config(format!("field.sensor `{}` is not defined", section.sensor)))?;
    let refinement = s.cfg.run.simulation.sensor_refinement;
    let cells: Vec<usize> = match (&options.cells, section.cells.is_empty()) {
        (Some(c), _) => c.clone(),
        (None, false) => section.cells.clone(),
        (None, true) => controllers.iter().map(|c| c.cell_id).collect(),
    };
    let sim_error = |e: SimulationError| CliError::Config(e.to_string());
    let mut summaries = Vec::new();
    let mut export = |c: &CellController, file: String| -> Result<(), CliError> {
        let cell = &s.env.cells[c.cell_id];
        let samples = sample_vector_field(cell, c, section.resolution, &model, refinement)
            .map_err(sim_error)?;
        write_vector_field_csv(&samples, create(&s.cfg.out.join(&file))?).map_err(sim_error)?;
        summaries.push(FieldSummary {
            cell: c.cell_id,
            epsilon: c.bounds.epsilon,
            sigma_m: c.bounds.sigma_m,
            objective: c.objective,
            points: samples.len(),
            file,
        });
        Ok(())
    };
    for &cell in &cells {
        let c = controllers
            .iter()
            .find(|c| c.cell_id == cell)
            .ok_or_else(|| CliError::Config(format!("no stored controller for cell {cell}")))?;
        export(c, format!("field_cell{cell}.csv"))?;
    }
    for pair in &section.comparisons {
        let mut config = s.cfg.synthesis_config(s.dim())?;
        config.bounds.epsilon = pair.epsilon;
        config.bounds.sigma_m = pair.sigma_m;
        for &cell in &cells {
            let entry = s
                .plan
                .entry_for(cell)
                .ok_or_else(|| CliError::Config(format!("cell {cell} is not part of the plan")))?;
            let c = synthesize_entry(&s.env, &s.plan, entry, &config).map_err(synthesis_error)?;
            export(
                &c,
                format!("field_cell{cell}_eps{}_sigma{}.csv", pair.epsilon, pair.sigma_m),
            )?;
        }
    }
    write(
        &s.cfg.out.join(FIELD_FILE),
        &to_json(&Report {
            pass: true,
            cells: summaries,
        }),
    )
}

pub fn pipeline(options: &Options) -> Result<(), CliError> {
    synth(options)?;
    verify(options)?;
    simulate(options)?;
    field(options)
}
