//! Dense two-phase tableau simplex.
//!
//! Variables are shifted or split so every internal column is non-negative, finite upper
//! bounds become rows, and each row receives an artificial column. The artificial block
//! starts as the identity, so it holds `B^-1` at every iteration, which is where the duals
//! come from. Pricing is Dantzig's rule until a run of degenerate pivots, then Bland's rule
//! for the rest of the solve.

use crate::error::LpError;
use crate::problem::{Sense, StandardLp};
use crate::solution::{Backend, LpSolution, LpStatus, SolverOptions};

const PIVOT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq, Eq)]
enum RowOrigin {
    Ub(usize),
    Eq(usize),
    Bound,
}

struct Tableau {
    rows: usize,
    /// Structural + slack columns; artificials follow.
    real_cols: usize,
    width: usize,
    data: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    objective: Vec<f64>,
    objective_rhs: f64,
    iterations: usize,
    bland: bool,
    degenerate_run: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn reset_objective(&mut self, cost: &[f64]) {
        self.objective = cost.to_vec();
        self.objective_rhs = 0.0;
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.data[i * self.width..(i + 1) * self.width];
            for (o, a) in self.objective.iter_mut().zip(row) {
                *o -= cb * a;
            }
            self.objective_rhs -= cb * self.rhs[i];
        }
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let w = self.width;
        let p = self.data[r * w + e];
        for v in &mut self.data[r * w..(r + 1) * w] {
            *v /= p;
        }
        self.rhs[r] /= p;
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.data[i * w + e];
            if f == 0.0 {
                continue;
            }
            for (v, a) in self.data[i * w..(i + 1) * w].iter_mut().zip(&pivot_row) {
                *v -= f * a;
            }
            self.data[i * w + e] = 0.0;
            self.rhs[i] -= f * pivot_rhs;
            if self.rhs[i].abs() < 1e-13 {
                self.rhs[i] = 0.0;
            }
        }
        let f = self.objective[e];
        if f != 0.0 {
            for (v, a) in self.objective.iter_mut().zip(&pivot_row) {
                *v -= f * a;
            }
            self.objective[e] = 0.0;
            self.objective_rhs -= f * pivot_rhs;
        }
        self.basis[r] = e;
        self.iterations += 1;
    }

    fn run(&mut self, options: &SolverOptions) -> Result<PhaseEnd, LpError> {
        loop {
            if self.iterations >= options.max_iterations {
                return Err(LpError::NumericalFailure {
                    backend: "dense-simplex",
                    iterations: self.iterations,
                    reason: "iteration limit reached".into(),
                });
            }
            let entering = if self.bland {
                (0..self.real_cols).find(|&j| self.objective[j] < -options.optimality_tol)
            } else {
                (0..self.real_cols)
                    .filter(|&j| self.objective[j] < -options.optimality_tol)
                    .min_by(|&a, &b| self.objective[a].total_cmp(&self.objective[b]))
            };
            let Some(e) = entering else {
                return Ok(PhaseEnd::Optimal);
            };

            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, e);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs[i] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                        let better = if tie {
                            if self.bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                a > self.at(r, e)
                            }
                        } else {
                            ratio < best
                        };
                        if better {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            if ratio <= 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run > options.degenerate_pivot_limit && !self.bland {
                    log::debug!("dense simplex: switching to Bland's rule");
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
            }
            self.pivot(r, e);
        }
    }
}

pub(crate) fn solve(lp: &StandardLp, options: &SolverOptions) -> Result<LpSolution, LpError> {
    let n = lp.num_vars();
    // Internal columns: x_j = shift_j + sum(sign * xt_k).
    let mut var_cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut shift = vec![0.0; n];
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    let mut col_count = 0;
    for (j, v) in lp.vars.iter().enumerate() {
        if v.lower.is_finite() {
            shift[j] = v.lower;
            var_cols.push(vec![(col_count, 1.0)]);
            if v.upper.is_finite() {
                bound_rows.push((col_count, v.upper - v.lower));
            }
            col_count += 1;
        } else if v.upper.is_finite() {
            shift[j] = v.upper;
            var_cols.push(vec![(col_count, -1.0)]);
            col_count += 1;
        } else {
            var_cols.push(vec![(col_count, 1.0), (col_count + 1, -1.0)]);
            col_count += 2;
        }
    }
    let structural = col_count;

    // Rows as (coeffs, rhs, has_slack, origin).
    let mut rows: Vec<(Vec<(usize, f64)>, f64, bool, RowOrigin)> = Vec::new();
    let lower_row = |coeffs: &[(usize, f64)], rhs: f64| {
        let mut out = Vec::new();
        let mut b = rhs;
        for &(j, a) in coeffs {
            b -= a * shift[j];
            for &(k, s) in &var_cols[j] {
                out.push((k, a * s));
            }
        }
        (out, b)
    };
    for (i, r) in lp.ub.iter().enumerate() {
        let (c, b) = lower_row(&r.coeffs, r.rhs);
        rows.push((c, b, true, RowOrigin::Ub(i)));
    }
    for &(k, cap) in &bound_rows {
        rows.push((vec![(k, 1.0)], cap, true, RowOrigin::Bound));
    }
    for (i, r) in lp.eq.iter().enumerate() {
        let (c, b) = lower_row(&r.coeffs, r.rhs);
        rows.push((c, b, false, RowOrigin::Eq(i)));
    }

    let m = rows.len();
    let slack_count = rows.iter().filter(|r| r.2).count();
    let real_cols = structural + slack_count;
    let width = real_cols + m;
    let mut data = vec![0.0; m * width];
    let mut rhs = vec![0.0; m];
    let mut row_sign = vec![1.0; m];
    let mut slack = structural;
    for (i, (coeffs, b, has_slack, _)) in rows.iter().enumerate() {
        let sign = if *b < 0.0 { -1.0 } else { 1.0 };
        row_sign[i] = sign;
        for &(k, a) in coeffs {
            data[i * width + k] += sign * a;
        }
        if *has_slack {
            data[i * width + slack] = sign;
            slack += 1;
        }
        data[i * width + real_cols + i] = 1.0;
        rhs[i] = sign * b;
    }

    let sense_factor = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut cost = vec![0.0; width];
    for (j, cols) in var_cols.iter().enumerate() {
        for &(k, s) in cols {
            cost[k] += sense_factor * lp.cost[j] * s;
        }
    }

    let mut t = Tableau {
        rows: m,
        real_cols,
        width,
        data,
        rhs,
        basis: (real_cols..real_cols + m).collect(),
        objective: Vec::new(),
        objective_rhs: 0.0,
        iterations: 0,
        bland: false,
        degenerate_run: 0,
    };

    // Phase 1: minimize the sum of artificials.
    let mut phase1 = vec![0.0; width];
    for c in &mut phase1[real_cols..] {
        *c = 1.0;
    }
    t.reset_objective(&phase1);
    if let PhaseEnd::Unbounded = t.run(options)? {
        return Err(LpError::NumericalFailure {
            backend: "dense-simplex",
            iterations: t.iterations,
            reason: "phase 1 reported unbounded".into(),
        });
    }
    let scale = t.rhs.iter().fold(1.0_f64, |a, b| a.max(b.abs()));
    let infeasibility: f64 = (0..m)
        .filter(|&i| t.basis[i] >= real_cols)
        .map(|i| t.rhs[i])
        .sum();
    if infeasibility > options.feasibility_tol * scale {
        return Ok(LpSolution::without_point(
            LpStatus::Infeasible,
            t.iterations,
            Backend::DenseSimplex,
        ));
    }
    for i in 0..m {
        if t.basis[i] < real_cols {
            continue;
        }
        let best = (0..real_cols)
            .filter(|&k| t.at(i, k).abs() > PIVOT_TOL)
            .max_by(|&a, &b| t.at(i, a).abs().total_cmp(&t.at(i, b).abs()));
        if let Some(k) = best {
            t.pivot(i, k);
        }
    }

    t.bland = false;
    t.degenerate_run = 0;
    t.reset_objective(&cost);
    if let PhaseEnd::Unbounded = t.run(options)? {
        return Ok(LpSolution::without_point(
            LpStatus::Unbounded,
            t.iterations,
            Backend::DenseSimplex,
        ));
    }

    let mut xt = vec![0.0; width];
    for i in 0..m {
        xt[t.basis[i]] = t.rhs[i];
    }
    let x: Vec<f64> = var_cols
        .iter()
        .enumerate()
        .map(|(j, cols)| shift[j] + cols.iter().map(|&(k, s)| s * xt[k]).sum::<f64>())
        .collect();

    let mut ub_duals = vec![0.0; lp.ub.len()];
    let mut eq_duals = vec![0.0; lp.eq.len()];
    for (i, (_, _, _, origin)) in rows.iter().enumerate() {
        let y: f64 = (0..m)
            .map(|r| cost[t.basis[r]] * t.at(r, real_cols + i))
            .sum();
        let dual = sense_factor * row_sign[i] * y;
        match *origin {
            RowOrigin::Ub(k) => ub_duals[k] = dual,
            RowOrigin::Eq(k) => eq_duals[k] = dual,
            RowOrigin::Bound => {}
        }
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        ub_duals,
        eq_duals,
        reduced_costs: Vec::new(),
        objective: f64::NAN,
        iterations: t.iterations,
        backend: Backend::DenseSimplex,
    })
}
