//! Independent check of synthesized controllers: for sampled states the inner maximization
//! over PMFs is solved directly (no dualization) and the resulting worst case is compared
//! with the certified margins.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use safe_field_lp::{
    solve_lp_with, Backend, LinExpr, LpBuilder, LpStatus, Sense, SolverOptions, StandardLp,
};

use crate::clfcbf::{build_cbf_rows, build_clf_row, numeric_c_p, ConstraintRow, RowKind};
use crate::geometry::ConvexCell;
use crate::measurement::{
    assemble_probability_constraints, build_expectation_kernel, GridSpec, PmfGrid,
    ProbabilityConstraints,
};
use crate::synthesis::CellController;

/// Absolute tolerance on verification slacks.
pub const SLACK_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerificationError {
    #[error("no PMF is consistent with landmark {landmark} at x = {x:?}")]
    InfeasibleMeasurementSet { landmark: usize, x: Vec<f64> },
    #[error("adversary solver failure: {0}")]
    Solver(String),
    #[error("controller does not match cell {0}")]
    CellMismatch(usize),
    #[error("cell {cell}, row {kind:?}: slack {slack:.3e} at x = {x:?}")]
    VerificationFailed {
        cell: usize,
        kind: RowKind,
        x: Vec<f64>,
        slack: f64,
    },
}

/// Worst-case PMF of one landmark for one row at one state.
#[derive(Debug, Clone)]
pub struct LandmarkAdversary {
    pub worst_pmf: PmfGrid,
    pub value: f64,
    /// Objective of the dual at the solver's multipliers.
    pub dual_value: f64,
}

impl LandmarkAdversary {
    pub fn duality_gap(&self) -> f64 {
        (self.value - self.dual_value).abs()
    }
}

/// Worst case of `c_p . P` over every landmark of a row.
#[derive(Debug, Clone)]
pub struct AdversaryResult {
    pub kind: RowKind,
    pub x: DVector<f64>,
    pub inner_value: f64,
    pub landmarks: Vec<LandmarkAdversary>,
}

fn adversary_options() -> SolverOptions {
    SolverOptions::with_backend(Backend::DenseSimplex)
}

/// `max c_p . P` over PMFs consistent with the landmark at `x`, with the MAD auxiliaries at
/// their smallest feasible value `z = |U - (l - x)|`.
pub fn adversary_lp(c_p: &[f64], x: &DVector<f64>, prob: &ProbabilityConstraints) -> StandardLp {
    let d = prob.dim();
    let np = prob.num_points();
    let mut b = LpBuilder::new(Sense::Maximize);
    let p: Vec<_> = (0..np)
        .map(|j| b.add_var(format!("P[{j}]"), 0.0, f64::INFINITY))
        .collect();
    for (j, &c) in c_p.iter().enumerate() {
        b.set_cost(p[j], c);
    }
    let mut total = LinExpr::constant(-1.0);
    for &v in &p {
        total.add_term(v, 1.0);
    }
    b.add_eq("mass", total);
    let shift = &prob.a_x * x + &prob.b_p;
    for r in 0..2 * d {
        let mut e = LinExpr::constant(shift[r]);
        for j in 0..np {
            e.add_term(p[j], prob.a_p[(r, j)]);
        }
        b.add_le(format!("mean[{r}]"), e);
    }
    let z = prob.minimal_z(x);
    for q in 0..d {
        let mut e = LinExpr::constant(-prob.sigma_m);
        for j in 0..np {
            e.add_term(p[j], z[(q, j)]);
        }
        b.add_le(format!("mad[{q}]"), e);
    }
    b.build()
}

/// The inner dual in explicit form:
/// `min lambda_s - lambda_p . (A'_x x + b_p) + sigma_m sum lambda_z`
/// subject to `c_p[j] - lambda_s - (A_p' lambda_p)_j - sum_q z_qj lambda_z,q <= 0`.
pub fn inner_dual_lp(c_p: &[f64], x: &DVector<f64>, prob: &ProbabilityConstraints) -> StandardLp {
    let d = prob.dim();
    let np = prob.num_points();
    let mut b = LpBuilder::new(Sense::Minimize);
    let lambda_s = b.add_var("lambda_s", f64::NEG_INFINITY, f64::INFINITY);
    let lambda_p: Vec<_> = (0..2 * d)
        .map(|r| b.add_var(format!("lambda_p[{r}]"), 0.0, f64::INFINITY))
        .collect();
    let lambda_z: Vec<_> = (0..d)
        .map(|q| b.add_var(format!("lambda_z[{q}]"), 0.0, f64::INFINITY))
        .collect();
    b.set_cost(lambda_s, 1.0);
    let shift = &prob.a_x * x + &prob.b_p;
    for r in 0..2 * d {
        b.set_cost(lambda_p[r], -shift[r]);
    }
    for &l in &lambda_z {
        b.set_cost(l, prob.sigma_m);
    }
    let z = prob.minimal_z(x);
    for j in 0..np {
        let mut e = LinExpr::constant(c_p[j]);
        e.add_term(lambda_s, -1.0);
        for r in 0..2 * d {
            e.add_term(lambda_p[r], -prob.a_p[(r, j)]);
        }
        for q in 0..d {
            e.add_term(lambda_z[q], -z[(q, j)]);
        }
        b.add_le(format!("P[{j}]"), e);
    }
    b.build()
}

/// Solves the adversary for one landmark.
pub fn adversarial_pmf(
    c_p: &[f64],
    x: &DVector<f64>,
    prob: &ProbabilityConstraints,
    grid: &GridSpec,
    landmark: usize,
) -> Result<LandmarkAdversary, VerificationError> {
    let lp = adversary_lp(c_p, x, prob);
    let sol = solve_lp_with(&lp, &adversary_options())
        .map_err(|e| VerificationError::Solver(e.to_string()))?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(VerificationError::InfeasibleMeasurementSet {
                landmark,
                x: x.iter().cloned().collect(),
            })
        }
        LpStatus::Unbounded => {
            return Err(VerificationError::Solver("bounded adversary reported unbounded".into()))
        }
    }
    let mass: Vec<f64> = sol.x.iter().map(|&p| p.max(0.0)).collect();
    let total: f64 = mass.iter().sum();
    let worst_pmf = PmfGrid {
        spec: grid.clone(),
        mass: mass.iter().map(|m| m / total).collect(),
    };
    Ok(LandmarkAdversary {
        worst_pmf,
        value: sol.objective,
        dual_value: sol.dual_objective(&lp, 1e-9),
    })
}

/// Worst case of a row at `x`, summed over the landmarks (their PMFs are independent).
pub fn row_adversary(
    row: &ConstraintRow,
    gains: &[f64],
    x: &DVector<f64>,
    prob: &[ProbabilityConstraints],
    grid: &GridSpec,
) -> Result<AdversaryResult, VerificationError> {
    let c_p = numeric_c_p(row, gains);
    let np = grid.num_points();
    let mut landmarks = Vec::with_capacity(prob.len());
    for (m, pc) in prob.iter().enumerate() {
        landmarks.push(adversarial_pmf(
            &c_p.as_slice()[m * np..(m + 1) * np],
            x,
            pc,
            grid,
            m,
        )?);
    }
    Ok(AdversaryResult {
        kind: row.kind,
        x: x.clone(),
        inner_value: landmarks.iter().map(|l| l.value).sum(),
        landmarks,
    })
}

/// Rows and measurement sets a controller was synthesized against, rebuilt from its own
/// record.
pub fn controller_rows(
    controller: &CellController,
    cell: &ConvexCell,
) -> (Vec<ConstraintRow>, Vec<ProbabilityConstraints>) {
    let matrices = controller.basis.matrices(&controller.grid);
    let layout = controller.gains.layout();
    let obstacle = controller.exit.obstacle_rows(cell.body.num_rows());
    let mut rows = vec![build_clf_row(
        &controller.exit,
        &controller.dynamics,
        controller.alpha_v,
        &matrices,
        &layout,
    )];
    rows.extend(build_cbf_rows(
        cell,
        &obstacle,
        &controller.dynamics,
        controller.alpha_h,
        &matrices,
        &layout,
    ));
    let kernel = build_expectation_kernel(&controller.grid);
    let prob = controller
        .landmarks
        .iter()
        .map(|l| assemble_probability_constraints(&kernel, &controller.bounds, l))
        .collect();
    (rows, prob)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub interior: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            interior: 200,
            seed: 0,
        }
    }
}

/// Vertices followed by uniform interior points (rejection sampling in the bounding box).
/// The stream depends on the seed and the cell id only.
pub fn sample_states(cell: &ConvexCell, sampling: &SamplingConfig) -> Vec<DVector<f64>> {
    let mut out = cell.vertices.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    rng.set_stream(cell.id as u64);
    let (lo, hi) = cell.bounding_box();
    let mut accepted = 0;
    while accepted < sampling.interior {
        let x = DVector::from_fn(lo.len(), |q, _| rng.gen_range(lo[q]..=hi[q]));
        if cell.contains(&x, 0.0) {
            out.push(x);
            accepted += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub kind: RowKind,
    pub delta: f64,
    /// `max_x (c_x . x + inner value + r) + delta`; must not exceed the tolerance.
    pub max_slack: f64,
    pub worst_x: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub cell: usize,
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Largest primal/dual gap seen in the adversary solves.
    pub max_duality_gap: f64,
    pub rows: Vec<RowReport>,
    pub pass: bool,
}

impl VerificationReport {
    /// The first failing row as an error.
    pub fn into_result(self) -> Result<Self, VerificationError> {
        match self.rows.iter().find(|r| !r.pass) {
            Some(r) => Err(VerificationError::VerificationFailed {
                cell: self.cell,
                kind: r.kind,
                x: r.worst_x.clone(),
                slack: r.max_slack,
            }),
            None => Ok(self),
        }
    }
}

/// Checks every row of `controller` at the cell's vertices and at seeded interior points.
pub fn verify_controller(
    controller: &CellController,
    cell: &ConvexCell,
    sampling: &SamplingConfig,
) -> Result<VerificationReport, VerificationError> {
    if controller.cell_id != cell.id {
        return Err(VerificationError::CellMismatch(cell.id));
    }
    let (rows, prob) = controller_rows(controller, cell);
    let gains = controller.gains.to_values();
    let states = sample_states(cell, sampling);
    let mut max_gap: f64 = 0.0;
    let mut reports = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        let delta = controller.margins[k].delta;
        let mut worst = f64::NEG_INFINITY;
        let mut worst_x = states[0].clone();
        for x in &states {
            let adv = row_adversary(row, &gains, x, &prob, &controller.grid)?;
            for l in &adv.landmarks {
                max_gap = max_gap.max(l.duality_gap());
            }
            let slack = row.c_x.dot(x) + adv.inner_value + row.r.evaluate(&gains) + delta;
            if slack > worst {
                worst = slack;
                worst_x = x.clone();
            }
        }
        reports.push(RowReport {
            kind: row.kind,
            delta,
            max_slack: worst,
            worst_x: worst_x.iter().cloned().collect(),
            pass: worst <= SLACK_TOL,
        });
    }
    let pass = reports.iter().all(|r| r.pass);
    if max_gap > SLACK_TOL {
        log::warn!("cell {}: adversary duality gap {max_gap:.3e}", cell.id);
    }
    Ok(VerificationReport {
        cell: cell.id,
        samples: states.len(),
        seed: sampling.seed,
        tolerance: SLACK_TOL,
        max_duality_gap: max_gap,
        rows: reports,
        pass,
    })
}
