use highs::{HighsModelStatus, RowProblem, Sense as HighsSense};

use crate::error::LpError;
use crate::problem::{Sense, StandardLp};
use crate::solution::{Backend, LpSolution, LpStatus, SolverOptions};

/// HiGHS warns about (and drops) explicit zeros.
fn nonzero<'a, C: Copy>(
    coeffs: &'a [(usize, f64)],
    cols: &'a [C],
) -> impl Iterator<Item = (C, f64)> + 'a {
    coeffs
        .iter()
        .filter(|&&(_, a)| a != 0.0)
        .map(move |&(j, a)| (cols[j], a))
}

fn build(lp: &StandardLp) -> RowProblem {
    let mut pb = RowProblem::default();
    let cols: Vec<_> = lp
        .vars
        .iter()
        .zip(&lp.cost)
        .map(|(v, &c)| pb.add_column(c, v.lower..=v.upper))
        .collect();
    let mut entries = Vec::new();
    for row in &lp.ub {
        entries.clear();
        entries.extend(nonzero(&row.coeffs, &cols));
        pb.add_row(..=row.rhs, &entries);
    }
    for row in &lp.eq {
        entries.clear();
        entries.extend(nonzero(&row.coeffs, &cols));
        pb.add_row(row.rhs..=row.rhs, &entries);
    }
    pb
}

fn run(lp: &StandardLp, options: &SolverOptions, presolve: bool) -> highs::SolvedModel {
    let sense = match lp.sense {
        Sense::Minimize => HighsSense::Minimise,
        Sense::Maximize => HighsSense::Maximise,
    };
    let mut model = build(lp).optimise(sense);
    model.make_quiet();
    model.set_option("presolve", if presolve { "on" } else { "off" });
    model.set_option("parallel", "off");
    model.set_option("solver", "simplex");
    model.set_option("primal_feasibility_tolerance", options.feasibility_tol);
    model.set_option("dual_feasibility_tolerance", options.optimality_tol);
    model.solve()
}

pub(crate) fn solve(lp: &StandardLp, options: &SolverOptions) -> Result<LpSolution, LpError> {
    let mut solved = run(lp, options, true);
    if solved.status() == HighsModelStatus::UnboundedOrInfeasible {
        // Presolve cannot always tell the two apart; the plain simplex can.
        solved = run(lp, options, false);
    }
    let iterations = solved.simplex_iteration_count().max(0) as usize;
    let status = match solved.status() {
        HighsModelStatus::Optimal | HighsModelStatus::ModelEmpty => LpStatus::Optimal,
        HighsModelStatus::Infeasible => LpStatus::Infeasible,
        HighsModelStatus::Unbounded => LpStatus::Unbounded,
        other => {
            return Err(LpError::NumericalFailure {
                backend: "highs",
                iterations,
                reason: format!("model status {other:?}"),
            })
        }
    };
    if status != LpStatus::Optimal {
        return Ok(LpSolution::without_point(status, iterations, Backend::Highs));
    }
    let sol = solved.get_solution();
    let duals = sol.dual_rows();
    let (ub_duals, eq_duals) = duals.split_at(lp.ub.len());
    Ok(LpSolution {
        status,
        x: sol.columns().to_vec(),
        ub_duals: ub_duals.to_vec(),
        eq_duals: eq_duals.to_vec(),
        reduced_costs: Vec::new(),
        objective: f64::NAN,
        iterations,
        backend: Backend::Highs,
    })
}
