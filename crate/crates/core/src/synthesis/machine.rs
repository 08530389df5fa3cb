//! The robust program obtained by mechanical dualization.
//!
//! For each row the inner PMF program is written symbolically (its cost depends on the
//! gains, its rows on the state `x` and on the MAD auxiliaries `z`), dualized with the
//! generic dualizer, and every resulting constraint is robustified over
//! `Xi = {(x, z) : x in cell, z_q >= |U_q - (l - x)_q|}` with no pruning of `Xi`. Its size
//! grows quadratically in the grid, so it is meant for small grids and cross-checks.

use safe_field_lp::{dualize, Constraint, LpBuilder, Program, Sense, VarId};

use super::hand::{add_gain_vars, header};
use super::{AssembledLp, CellContext, Route, SynthesisConfig};
use crate::robust::{BiAffine, UncertaintySet};

/// Uncertain coordinates: `x` first, then `z[m][q][j]`.
struct XiLayout {
    d: usize,
    np: usize,
}

impl XiLayout {
    fn x(&self, q: usize) -> usize {
        q
    }

    fn z(&self, m: usize, q: usize, j: usize) -> usize {
        self.d + (m * self.d + q) * self.np + j
    }
}

fn uncertainty_set(ctx: &CellContext, xi: &XiLayout) -> UncertaintySet {
    let d = xi.d;
    let np = xi.np;
    let body = &ctx.cell.body;
    let mut set = UncertaintySet::new(d + ctx.prob.len() * d * np);
    for c in 0..body.num_rows() {
        set.push(
            (0..d).map(|q| (xi.x(q), body.normals[(c, q)])).collect(),
            -body.offsets[c],
        );
    }
    for (m, prob) in ctx.prob.iter().enumerate() {
        for q in 0..d {
            for j in 0..np {
                let g = prob.landmark[q] - prob.u[(q, j)];
                set.push(vec![(xi.x(q), 1.0), (xi.z(m, q, j), -1.0)], g);
                set.push(vec![(xi.x(q), -1.0), (xi.z(m, q, j), -1.0)], -g);
            }
        }
    }
    set
}

/// Inner program `max_P c_p . P` over the stacked PMFs, symbolic in gains, `x` and `z`.
fn inner_program(ctx: &CellContext, k: usize, xi: &XiLayout) -> Program<BiAffine> {
    let d = xi.d;
    let np = xi.np;
    let row = &ctx.rows[k];
    let mut p = Program::<BiAffine>::new(Sense::Maximize);
    for m in 0..ctx.prob.len() {
        for j in 0..np {
            p.add_var(
                format!("P[{m}][{j}]"),
                0.0,
                f64::INFINITY,
                BiAffine::from_theta(&row.c_p[m * np + j]),
            );
        }
    }
    for (m, prob) in ctx.prob.iter().enumerate() {
        let col = |j: usize| m * np + j;
        p.eq.push(Constraint {
            name: format!("simplex[{m}]"),
            coeffs: (0..np).map(|j| (col(j), BiAffine::constant(1.0))).collect(),
            rhs: BiAffine::constant(1.0),
        });
        for r in 0..2 * d {
            let mut rhs = BiAffine::constant(-prob.b_p[r]);
            for q in 0..d {
                if prob.a_x[(r, q)] != 0.0 {
                    rhs.add(&BiAffine::xi_term(xi.x(q), -prob.a_x[(r, q)]));
                }
            }
            p.ub.push(Constraint {
                name: format!("mean[{m}][{r}]"),
                coeffs: (0..np)
                    .filter(|&j| prob.a_p[(r, j)] != 0.0)
                    .map(|j| (col(j), BiAffine::constant(prob.a_p[(r, j)])))
                    .collect(),
                rhs,
            });
        }
        for q in 0..d {
            p.ub.push(Constraint {
                name: format!("mad[{m}][{q}]"),
                coeffs: (0..np)
                    .map(|j| (col(j), BiAffine::xi_term(xi.z(m, q, j), 1.0)))
                    .collect(),
                rhs: BiAffine::constant(prob.sigma_m),
            });
        }
    }
    p
}

pub fn assemble_machine_lp(ctx: &CellContext, config: &SynthesisConfig) -> AssembledLp {
    let mut b = LpBuilder::new(Sense::Maximize);
    header(&mut b, ctx, "mechanical");
    add_gain_vars(&mut b, ctx, config);
    let xi = XiLayout {
        d: ctx.layout.d,
        np: ctx.prob[0].num_points(),
    };
    let set = uncertainty_set(ctx, &xi);

    let mut delta_vars = Vec::new();
    let mut omega = Vec::new();
    for (k, row) in ctx.rows.iter().enumerate() {
        let (lo, hi) = ctx.delta_bounds(k, config);
        let delta = b.add_var(format!("delta[{k}]"), lo, hi);
        let w = ctx.omega(k, config);
        b.set_cost(delta, w);
        delta_vars.push(delta);
        omega.push(w);

        let dual = dualize(&inner_program(ctx, k, &xi));
        let ids: Vec<VarId> = dual
            .vars
            .iter()
            .map(|v| b.add_var(format!("k{k}.{}", v.name), v.lower, v.upper))
            .collect();

        // Dual objective plus the rest of the row, for every (x, z).
        let mut top = BiAffine::from_theta(&row.r);
        top.theta.push((delta.0, 1.0));
        for q in 0..xi.d {
            top.add(&BiAffine::xi_term(xi.x(q), row.c_x[q]));
        }
        for (i, cost) in dual.cost.iter().enumerate() {
            top.add(&cost.times_theta(ids[i].0));
        }
        set.add_robust_le(&mut b, &format!("k{k}.worst"), &top);

        // Dual feasibility, for every (x, z).
        let lhs = |c: &Constraint<BiAffine>| {
            let mut e = c.rhs.scaled(-1.0);
            for (i, a) in &c.coeffs {
                e.add(&a.times_theta(ids[*i].0));
            }
            e
        };
        for c in &dual.ub {
            set.add_robust_le(&mut b, &format!("k{k}.{}", c.name), &lhs(c));
        }
        for c in &dual.eq {
            set.add_robust_eq(&mut b, &format!("k{k}.{}", c.name), &lhs(c));
        }
    }

    AssembledLp {
        lp: b.build(),
        route: Route::Machine,
        layout: ctx.layout,
        delta_vars,
        kinds: ctx.rows.iter().map(|r| r.kind).collect(),
        omega,
        duals: None,
        has_goal_constraint: false,
    }
}
