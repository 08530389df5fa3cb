//! Per-cell robust gain synthesis.
//!
//! For each row `k` (the CLF and one CBF per obstacle facet) the gains must satisfy
//! `c_x . x + c_p(K) . P + r(K) <= -delta_k` for every `x` in the cell and every PMF `P`
//! consistent with `x`. Dualizing the inner maximizations turns this into one LP, built
//! either from the closed-form dual blocks ([`assemble_robust_lp`]) or by mechanical
//! dualization ([`assemble_machine_lp`]).

mod hand;
mod machine;

use nalgebra::{DMatrix, DVector};
use safe_field_lp::{
    solve_lp_with, Backend, Constraint, LpSolution, LpStatus, SolverOptions, StandardLp, VarId,
};
use thiserror::Error;

pub use crate::basis::{BasisMap, CellGains, GainBasis, GainLayout};
use crate::clfcbf::{build_cbf_rows, build_clf_row, ConstraintRow, Dynamics, RowKind};
use crate::geometry::{ConvexCell, Environment};
use crate::measurement::{
    assemble_probability_constraints, build_expectation_kernel, make_delta_pmf, GridSpec,
    ProbabilityConstraints, UncertaintyBounds,
};
use crate::planning::{ExitAssignment, HighLevelPlan, PlanEntry, PlanMode};
pub use hand::{assemble_robust_lp, RowDualVars};
pub use machine::assemble_machine_lp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("cell {cell}: landmark {landmark} is not visible from vertex {vertex:?}")]
    LandmarkNotVisible {
        cell: usize,
        landmark: usize,
        vertex: Vec<f64>,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cell {cell}: no robust linear gain exists under these bounds")]
    SynthesisInfeasible { cell: usize },
    #[error("cell {cell}: solver failure: {reason}")]
    SolverFailure { cell: usize, reason: String },
    #[error("cell {cell}: landmark {landmark} seen from the goal is off the grid")]
    GoalObservationOffGrid { cell: usize, landmark: usize },
    #[error("synthesis failed for {} cell(s): {}", .0.len(), summarize(.0))]
    Cells(Vec<(usize, SynthesisError)>),
}

fn summarize(errors: &[(usize, SynthesisError)]) -> String {
    errors
        .iter()
        .map(|(c, e)| format!("[cell {c}] {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    pub dynamics: Dynamics,
    pub alpha_v: f64,
    pub alpha_h: f64,
    pub bounds: UncertaintyBounds,
    pub grid: GridSpec,
    pub basis: GainBasis,
    pub omega_clf: f64,
    pub omega_cbf: f64,
    /// Upper bound on every margin. Margins grow with gain magnitude, so without a cap the
    /// program is unbounded on most cells.
    pub margin_cap: f64,
    /// Optional box `|gain| <= gain_bound` on every gain entry.
    pub gain_bound: Option<f64>,
    /// Let the goal-cell CLF margin go negative. The goal constraint pins `u = 0` at a PMF
    /// that stays feasible within `epsilon` of the goal, where `V > 0`.
    pub signed_goal_margin: bool,
    /// Second solve that minimizes the L1 norm of the gains among margin-optimal
    /// solutions.
    pub regularize: bool,
    pub solver: SolverOptions,
}

impl SynthesisConfig {
    /// Single integrator with the case-study hyperparameters.
    pub fn case_study(grid: GridSpec) -> Self {
        Self {
            dynamics: Dynamics::single_integrator(grid.dim()),
            alpha_v: 1.0,
            alpha_h: 100.0,
            bounds: UncertaintyBounds {
                epsilon: 4.0,
                sigma_m: 16.0,
            },
            grid,
            basis: GainBasis::default(),
            omega_clf: 1.0,
            omega_cbf: 1.0,
            margin_cap: 10.0,
            gain_bound: None,
            signed_goal_margin: true,
            regularize: true,
            solver: SolverOptions::with_backend(Backend::Highs),
        }
    }
}

/// Everything needed to assemble a cell's program.
#[derive(Debug, Clone)]
pub struct CellContext {
    pub cell: ConvexCell,
    pub exit: ExitAssignment,
    pub landmark_ids: Vec<usize>,
    pub landmarks: Vec<DVector<f64>>,
    pub matrices: Vec<DMatrix<f64>>,
    pub prob: Vec<ProbabilityConstraints>,
    pub rows: Vec<ConstraintRow>,
    pub layout: GainLayout,
    /// Goal point when the cell is the goal cell of a stabilizing plan.
    pub goal: Option<DVector<f64>>,
}

impl CellContext {
    pub fn new(
        cell: &ConvexCell,
        exit: &ExitAssignment,
        landmarks: &[DVector<f64>],
        goal: Option<DVector<f64>>,
        config: &SynthesisConfig,
    ) -> Result<Self, SynthesisError> {
        let d = cell.dim();
        if config.grid.dim() != d || config.dynamics.dim() != d {
            return Err(SynthesisError::DimensionMismatch(format!(
                "cell is {d}-dimensional, grid {} and dynamics {}",
                config.grid.dim(),
                config.dynamics.dim()
            )));
        }
        if cell.landmark_ids.is_empty() {
            return Err(SynthesisError::DimensionMismatch(format!(
                "cell {} has no landmarks",
                cell.id
            )));
        }
        let positions: Vec<DVector<f64>> = cell
            .landmark_ids
            .iter()
            .map(|&l| landmarks[l].clone())
            .collect();
        // Affine-in-x displacements are maximized at vertices.
        for (&id, l) in cell.landmark_ids.iter().zip(&positions) {
            for v in &cell.vertices {
                let y = l - v;
                if !config.grid.in_support(y.as_slice()) {
                    return Err(SynthesisError::LandmarkNotVisible {
                        cell: cell.id,
                        landmark: id,
                        vertex: v.iter().cloned().collect(),
                    });
                }
            }
        }
        config.bounds.check_resolution(&config.grid);
        let kernel = build_expectation_kernel(&config.grid);
        let matrices = config.basis.matrices(&config.grid);
        let layout = GainLayout {
            n_u: config.dynamics.n_u(),
            d,
            n_maps: config.basis.len(),
            n_landmarks: positions.len(),
        };
        let prob = positions
            .iter()
            .map(|l| assemble_probability_constraints(&kernel, &config.bounds, l))
            .collect();
        let obstacle = exit.obstacle_rows(cell.body.num_rows());
        let mut rows = vec![build_clf_row(
            exit,
            &config.dynamics,
            config.alpha_v,
            &matrices,
            &layout,
        )];
        rows.extend(build_cbf_rows(
            cell,
            &obstacle,
            &config.dynamics,
            config.alpha_h,
            &matrices,
            &layout,
        ));
        Ok(Self {
            cell: cell.clone(),
            exit: exit.clone(),
            landmark_ids: cell.landmark_ids.clone(),
            landmarks: positions,
            matrices,
            prob,
            rows,
            layout,
            goal,
        })
    }

    pub fn is_goal_cell(&self) -> bool {
        self.exit.face.is_none()
    }

    /// Margin variable bounds for row `k`.
    fn delta_bounds(&self, k: usize, config: &SynthesisConfig) -> (f64, f64) {
        let lower = if k == 0 && self.is_goal_cell() && config.signed_goal_margin {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        (lower, config.margin_cap)
    }

    fn omega(&self, k: usize, config: &SynthesisConfig) -> f64 {
        match self.rows[k].kind {
            RowKind::Clf => config.omega_clf,
            RowKind::Cbf { .. } => config.omega_cbf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Closed-form dual blocks.
    Hand,
    /// Mechanical dualization of the inner programs.
    Machine,
}

#[derive(Debug, Clone)]
pub struct AssembledLp {
    pub lp: StandardLp,
    pub route: Route,
    pub layout: GainLayout,
    pub delta_vars: Vec<VarId>,
    pub kinds: Vec<RowKind>,
    pub omega: Vec<f64>,
    /// Per-row multiplier variables (closed-form route only).
    pub duals: Option<Vec<RowDualVars>>,
    pub has_goal_constraint: bool,
}

/// Appends `sum_m K_{P,m} P_goal,m + K_b = 0`, with `P_goal,m` the delta PMF of landmark
/// `m` observed from the goal.
pub fn add_goal_constraint(
    assembled: &mut AssembledLp,
    ctx: &CellContext,
    grid: &GridSpec,
) -> Result<(), SynthesisError> {
    let goal = ctx.goal.as_ref().ok_or_else(|| {
        SynthesisError::DimensionMismatch(format!("cell {} has no goal", ctx.cell.id))
    })?;
    let layout = &ctx.layout;
    let mut coeffs = vec![Vec::new(); layout.n_u];
    for (m, l) in ctx.landmarks.iter().enumerate() {
        let y = l - goal;
        let p = make_delta_pmf(grid, y.as_slice()).map_err(|_| {
            SynthesisError::GoalObservationOffGrid {
                cell: ctx.cell.id,
                landmark: ctx.landmark_ids[m],
            }
        })?;
        let pv = p.vector();
        for (i, r) in ctx.matrices.iter().enumerate() {
            let feature = r * &pv;
            for (a, row) in coeffs.iter_mut().enumerate() {
                for b in 0..layout.d {
                    if feature[b] != 0.0 {
                        row.push((layout.k(m, i, a, b), feature[b]));
                    }
                }
            }
        }
    }
    for (a, mut row) in coeffs.into_iter().enumerate() {
        row.push((layout.k_b(a), 1.0));
        assembled.lp.eq.push(Constraint {
            name: format!("goal[{a}]"),
            coeffs: row,
            rhs: 0.0,
        });
    }
    assembled.has_goal_constraint = true;
    Ok(())
}

/// Multipliers of one row at the optimum (closed-form route).
#[derive(Debug, Clone, PartialEq)]
pub struct RowDuals {
    pub lambda_x: Vec<f64>,
    pub lambda_p: Vec<Vec<f64>>,
    pub lambda_s: Vec<f64>,
    pub lambda_z: Vec<Vec<f64>>,
    pub rho1: Vec<Vec<f64>>,
    pub rho2: Vec<Vec<f64>>,
    pub eta1: Vec<Vec<f64>>,
    pub eta2: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowMargin {
    pub kind: RowKind,
    pub delta: f64,
}

/// Synthesized controller for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellController {
    pub cell_id: usize,
    pub landmark_ids: Vec<usize>,
    pub landmarks: Vec<DVector<f64>>,
    pub basis: GainBasis,
    pub gains: CellGains,
    pub margins: Vec<RowMargin>,
    /// Optimal `sum omega_k delta_k`.
    pub objective: f64,
    pub exit: ExitAssignment,
    pub alpha_v: f64,
    pub alpha_h: f64,
    pub bounds: UncertaintyBounds,
    pub grid: GridSpec,
    pub dynamics: Dynamics,
    pub goal_constraint: bool,
    pub duals: Option<Vec<RowDuals>>,
}

impl CellController {
    pub fn margin(&self, kind: RowKind) -> Option<f64> {
        self.margins.iter().find(|m| m.kind == kind).map(|m| m.delta)
    }
}

fn solve(
    lp: &StandardLp,
    options: &SolverOptions,
    cell: usize,
) -> Result<LpSolution, SynthesisError> {
    let sol = solve_lp_with(lp, options).map_err(|e| SynthesisError::SolverFailure {
        cell,
        reason: e.to_string(),
    })?;
    match sol.status {
        LpStatus::Optimal => Ok(sol),
        LpStatus::Infeasible => Err(SynthesisError::SynthesisInfeasible { cell }),
        LpStatus::Unbounded => Err(SynthesisError::SolverFailure {
            cell,
            reason: "program is unbounded".into(),
        }),
    }
}

/// Copy of `lp` that keeps the margin objective within `slack` of `best` and minimizes the
/// L1 norm of the gains instead.
fn regularized(assembled: &AssembledLp, best: f64, slack: f64) -> StandardLp {
    let mut lp = assembled.lp.clone();
    let weights: Vec<(usize, f64)> = assembled
        .delta_vars
        .iter()
        .zip(&assembled.omega)
        .map(|(v, &w)| (v.0, -w))
        .collect();
    lp.ub.push(Constraint {
        name: "margin_floor".into(),
        coeffs: weights,
        rhs: -(best - slack),
    });
    for c in lp.cost.iter_mut() {
        *c = 0.0;
    }
    for g in 0..assembled.layout.len() {
        let t = lp.add_var(format!("abs[{}]", lp.vars[g].name), 0.0, f64::INFINITY, -1.0);
        lp.ub.push(Constraint {
            name: format!("abs_hi[{g}]"),
            coeffs: vec![(g, 1.0), (t.0, -1.0)],
            rhs: 0.0,
        });
        lp.ub.push(Constraint {
            name: format!("abs_lo[{g}]"),
            coeffs: vec![(g, -1.0), (t.0, -1.0)],
            rhs: 0.0,
        });
    }
    lp
}

/// Solves an assembled program and reads off the controller.
pub fn synthesize_cell_controller(
    assembled: &AssembledLp,
    ctx: &CellContext,
    config: &SynthesisConfig,
) -> Result<CellController, SynthesisError> {
    let cell = ctx.cell.id;
    let first = solve(&assembled.lp, &config.solver, cell)?;
    let objective = first.objective;
    let sol = if config.regularize {
        let slack = 1e-7 * (1.0 + objective.abs());
        match solve(&regularized(assembled, objective, slack), &config.solver, cell) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("cell {cell}: gain regularization failed ({e}); keeping first solve");
                first
            }
        }
    } else {
        first
    };
    log::info!(
        "cell {cell}: objective {objective:.6} ({} vars, {} rows, {} iterations)",
        assembled.lp.num_vars(),
        assembled.lp.num_rows(),
        sol.iterations
    );
    let gains = CellGains::from_values(&assembled.layout, &sol.x[..assembled.layout.len()]);
    let margins = assembled
        .delta_vars
        .iter()
        .zip(&assembled.kinds)
        .map(|(v, &kind)| RowMargin {
            kind,
            delta: sol.x[v.0],
        })
        .collect();
    let duals = assembled
        .duals
        .as_ref()
        .map(|rows| rows.iter().map(|r| r.read(&sol.x)).collect());
    Ok(CellController {
        cell_id: cell,
        landmark_ids: ctx.landmark_ids.clone(),
        landmarks: ctx.landmarks.clone(),
        basis: config.basis.clone(),
        gains,
        margins,
        objective,
        exit: ctx.exit.clone(),
        alpha_v: config.alpha_v,
        alpha_h: config.alpha_h,
        bounds: config.bounds,
        grid: config.grid.clone(),
        dynamics: config.dynamics.clone(),
        goal_constraint: assembled.has_goal_constraint,
        duals,
    })
}

/// Context for a plan entry: the goal point is attached in the last cell of a stabilizing
/// plan.
pub fn context_for_entry(
    env: &Environment,
    plan: &HighLevelPlan,
    entry: &PlanEntry,
    config: &SynthesisConfig,
) -> Result<CellContext, SynthesisError> {
    let goal = (plan.mode == PlanMode::Stabilize && entry.exit.face.is_none())
        .then(|| env.goal.clone());
    CellContext::new(
        &env.cells[entry.cell],
        &entry.exit,
        &env.landmarks,
        goal,
        config,
    )
}

/// Assembles (closed-form route), adds the goal constraint where applicable and solves.
pub fn synthesize_entry(
    env: &Environment,
    plan: &HighLevelPlan,
    entry: &PlanEntry,
    config: &SynthesisConfig,
) -> Result<CellController, SynthesisError> {
    let ctx = context_for_entry(env, plan, entry, config)?;
    let mut assembled = assemble_robust_lp(&ctx, config);
    if ctx.goal.is_some() {
        add_goal_constraint(&mut assembled, &ctx, &config.grid)?;
    }
    synthesize_cell_controller(&assembled, &ctx, config)
}

/// One controller per plan cell (or per cell of `subset`), in plan order. Errors from
/// individual cells are collected.
pub fn synthesize_environment(
    env: &Environment,
    plan: &HighLevelPlan,
    config: &SynthesisConfig,
    subset: Option<&[usize]>,
) -> Result<Vec<CellController>, SynthesisError> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for entry in &plan.entries {
        if subset.is_some_and(|s| !s.contains(&entry.cell)) {
            continue;
        }
        match synthesize_entry(env, plan, entry, config) {
            Ok(c) => out.push(c),
            Err(e) => errors.push((entry.cell, e)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(SynthesisError::Cells(errors))
    }
}
