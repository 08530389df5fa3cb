use crate::error::LpError;
use crate::problem::{Sense, StandardLp};
use crate::{dense, highs_backend};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Dense simplex when `rows * columns` is below [`SolverOptions::dense_limit`], HiGHS
    /// otherwise.
    Auto,
    DenseSimplex,
    Highs,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub backend: Backend,
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub max_iterations: usize,
    pub dense_limit: usize,
    /// Consecutive degenerate pivots tolerated before the dense simplex switches from
    /// Dantzig pricing to Bland's rule.
    pub degenerate_pivot_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Auto,
            feasibility_tol: 1e-8,
            optimality_tol: 1e-8,
            max_iterations: 200_000,
            dense_limit: 400_000,
            degenerate_pivot_limit: 50,
        }
    }
}

impl SolverOptions {
    pub fn with_backend(backend: Backend) -> Self {
        Self {
            backend,
            ..Self::default()
        }
    }
}

/// Result of a solve. Primal values, duals and reduced costs are only meaningful when the
/// status is [`LpStatus::Optimal`].
///
/// Duals follow the sensitivity convention `d(objective)/d(rhs)`: for a maximization,
/// `<=` rows carry non-negative duals; for a minimization, non-positive ones.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub ub_duals: Vec<f64>,
    pub eq_duals: Vec<f64>,
    /// `cost - A' duals`, per variable.
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub backend: Backend,
}

impl LpSolution {
    pub(crate) fn without_point(status: LpStatus, iterations: usize, backend: Backend) -> Self {
        Self {
            status,
            x: Vec::new(),
            ub_duals: Vec::new(),
            eq_duals: Vec::new(),
            reduced_costs: Vec::new(),
            objective: match status {
                LpStatus::Unbounded => f64::INFINITY,
                _ => f64::NAN,
            },
            iterations,
            backend,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Objective of the dual program at the reported duals, with reduced costs priced
    /// against the variable bounds they push on. Infinite if a reduced cost pushes on an
    /// infinite bound by more than `tol`.
    pub fn dual_objective(&self, lp: &StandardLp, tol: f64) -> f64 {
        let rows: f64 = lp
            .ub
            .iter()
            .zip(&self.ub_duals)
            .chain(lp.eq.iter().zip(&self.eq_duals))
            .map(|(r, y)| r.rhs * y)
            .sum();
        let mut bounds = 0.0;
        for (var, &d) in lp.vars.iter().zip(&self.reduced_costs) {
            if d.abs() <= tol {
                continue;
            }
            // For a maximization a negative reduced cost holds the variable at its lower
            // bound; for a minimization, at its upper bound.
            let at_lower = (lp.sense == Sense::Maximize) == (d < 0.0);
            let bound = if at_lower { var.lower } else { var.upper };
            if !bound.is_finite() {
                return match lp.sense {
                    Sense::Maximize => f64::INFINITY,
                    Sense::Minimize => f64::NEG_INFINITY,
                };
            }
            bounds += d * bound;
        }
        rows + bounds
    }

    /// Largest product of a dual (or reduced cost) with its primal slack.
    pub fn complementarity_residual(&self, lp: &StandardLp) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, y) in lp.ub.iter().zip(&self.ub_duals) {
            let lhs: f64 = row.coeffs.iter().map(|&(j, a)| a * self.x[j]).sum();
            worst = worst.max((y * (row.rhs - lhs)).abs());
        }
        for ((var, &d), &x) in lp.vars.iter().zip(&self.reduced_costs).zip(&self.x) {
            let slack = match (var.lower.is_finite(), var.upper.is_finite()) {
                (true, true) => (x - var.lower).abs().min((var.upper - x).abs()),
                (true, false) => (x - var.lower).abs(),
                (false, true) => (var.upper - x).abs(),
                (false, false) => x.abs().max(1.0),
            };
            worst = worst.max((d * slack).abs());
        }
        worst
    }
}

pub fn solve_lp(lp: &StandardLp) -> Result<LpSolution, LpError> {
    solve_lp_with(lp, &SolverOptions::default())
}

pub fn solve_lp_with(lp: &StandardLp, options: &SolverOptions) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let backend = match options.backend {
        Backend::Auto => {
            let size = (lp.num_rows() + 1) * (lp.num_vars() + 1);
            if size <= options.dense_limit {
                Backend::DenseSimplex
            } else {
                Backend::Highs
            }
        }
        b => b,
    };
    let mut solution = match backend {
        Backend::DenseSimplex => dense::solve(lp, options)?,
        _ => highs_backend::solve(lp, options)?,
    };
    if solution.is_optimal() {
        solution.objective = lp.objective(&solution.x);
        solution.reduced_costs = reduced_costs(lp, &solution.ub_duals, &solution.eq_duals);
    }
    log::debug!(
        "lp solved: backend={:?} status={:?} vars={} rows={} iterations={}",
        solution.backend,
        solution.status,
        lp.num_vars(),
        lp.num_rows(),
        solution.iterations
    );
    Ok(solution)
}

fn reduced_costs(lp: &StandardLp, ub_duals: &[f64], eq_duals: &[f64]) -> Vec<f64> {
    let mut d = lp.cost.clone();
    for (row, y) in lp.ub.iter().zip(ub_duals).chain(lp.eq.iter().zip(eq_duals)) {
        for &(j, a) in &row.coeffs {
            d[j] -= a * y;
        }
    }
    d
}
