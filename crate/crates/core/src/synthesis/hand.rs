//! The robust program with its dual blocks written out in closed form.
//!
//! Per row `k` and landmark `m`, the inner PMF program has multipliers `lambda_p` (mean
//! rows), `lambda_s` (total mass) and `lambda_z` (MAD caps). Robustifying its objective over
//! the cell and the MAD auxiliaries introduces `lambda_x` (cell rows, shared by landmarks)
//! and `rho1`, `rho2` (MAD rows); robustifying each dual-feasibility row `j` introduces
//! `beta_j` (cell rows) and `eta1`, `eta2` (MAD rows of point `j`).

use safe_field_lp::{LinExpr, LpBuilder, Sense, VarId};

use super::{AssembledLp, CellContext, Route, RowDuals, SynthesisConfig};

/// Variable ids of one row's multipliers. Landmark-indexed vectors are `[m][..]`; MAD
/// multipliers are laid out `q * n_p + j`, `beta` as `j * n_c + c`.
#[derive(Debug, Clone)]
pub struct RowDualVars {
    pub lambda_x: Vec<VarId>,
    pub lambda_p: Vec<Vec<VarId>>,
    pub lambda_s: Vec<VarId>,
    pub lambda_z: Vec<Vec<VarId>>,
    pub rho1: Vec<Vec<VarId>>,
    pub rho2: Vec<Vec<VarId>>,
    pub eta1: Vec<Vec<VarId>>,
    pub eta2: Vec<Vec<VarId>>,
    pub beta: Vec<Vec<VarId>>,
}

impl RowDualVars {
    pub fn read(&self, x: &[f64]) -> RowDuals {
        let one = |v: &[VarId]| v.iter().map(|id| x[id.0]).collect::<Vec<f64>>();
        let many = |v: &[Vec<VarId>]| v.iter().map(|b| one(b)).collect::<Vec<_>>();
        RowDuals {
            lambda_x: one(&self.lambda_x),
            lambda_p: many(&self.lambda_p),
            lambda_s: one(&self.lambda_s),
            lambda_z: many(&self.lambda_z),
            rho1: many(&self.rho1),
            rho2: many(&self.rho2),
            eta1: many(&self.eta1),
            eta2: many(&self.eta2),
            beta: many(&self.beta),
        }
    }
}

fn vars(b: &mut LpBuilder, prefix: &str, n: usize, lower: f64) -> Vec<VarId> {
    (0..n)
        .map(|i| b.add_var(format!("{prefix}[{i}]"), lower, f64::INFINITY))
        .collect()
}

/// Adds the gain variables in layout order.
pub(super) fn add_gain_vars(b: &mut LpBuilder, ctx: &CellContext, config: &SynthesisConfig) {
    let layout = &ctx.layout;
    let (lo, hi) = match config.gain_bound {
        Some(g) => (-g, g),
        None => (f64::NEG_INFINITY, f64::INFINITY),
    };
    for m in 0..layout.n_landmarks {
        for i in 0..layout.n_maps {
            for a in 0..layout.n_u {
                for c in 0..layout.d {
                    let id = b.add_var(format!("K[{m}][{i}][{a}][{c}]"), lo, hi);
                    debug_assert_eq!(id.0, layout.k(m, i, a, c));
                }
            }
        }
    }
    for a in 0..layout.n_u {
        let id = b.add_var(format!("Kb[{a}]"), lo, hi);
        debug_assert_eq!(id.0, layout.k_b(a));
    }
}

/// Dimension bookkeeping written into the program header.
pub(super) fn header(b: &mut LpBuilder, ctx: &CellContext, route: &str) {
    let l = &ctx.layout;
    let (d, m, nk, nu) = (l.d, l.n_landmarks, l.n_maps, l.n_u);
    let np = ctx.prob[0].num_points();
    let nc = ctx.cell.body.num_rows();
    let rows = ctx.rows.len();
    b.comment(format!("route={route} cell={}", ctx.cell.id));
    b.comment(format!(
        "d={d} n_u={nu} n_k={nk} landmarks={m} n_p={np} n_c={nc} constraint_rows={rows}"
    ));
    let gains = m * nk * nu * d + nu;
    let per_row_vars = 1 + nc + m * (2 * d + 1 + d + 4 * d * np + np * nc);
    b.comment(format!("gain vars = M*n_k*n_u*d + n_u = {gains}"));
    b.comment(format!(
        "vars per row = 1 + n_c + M*(2d + 1 + d + 4*d*n_p + n_p*n_c) = {per_row_vars}"
    ));
    b.comment(format!("ub rows per row = 1 + M*n_p = {}", 1 + m * np));
    b.comment(format!("eq rows per row = d + 3*d*n_p*M = {}", d + 3 * d * np * m));
}

pub fn assemble_robust_lp(ctx: &CellContext, config: &SynthesisConfig) -> AssembledLp {
    let mut b = LpBuilder::new(Sense::Maximize);
    header(&mut b, ctx, "closed-form");
    add_gain_vars(&mut b, ctx, config);

    let d = ctx.layout.d;
    let n_land = ctx.layout.n_landmarks;
    let np = ctx.prob[0].num_points();
    let body = &ctx.cell.body;
    let nc = body.num_rows();

    let mut delta_vars = Vec::new();
    let mut omega = Vec::new();
    let mut duals = Vec::new();
    for (k, row) in ctx.rows.iter().enumerate() {
        let (lo, hi) = ctx.delta_bounds(k, config);
        let delta = b.add_var(format!("delta[{k}]"), lo, hi);
        let w = ctx.omega(k, config);
        b.set_cost(delta, w);
        delta_vars.push(delta);
        omega.push(w);

        let lambda_x = vars(&mut b, &format!("k{k}.lambda_x"), nc, 0.0);
        let mut dv = RowDualVars {
            lambda_x,
            lambda_p: Vec::new(),
            lambda_s: Vec::new(),
            lambda_z: Vec::new(),
            rho1: Vec::new(),
            rho2: Vec::new(),
            eta1: Vec::new(),
            eta2: Vec::new(),
            beta: Vec::new(),
        };
        for m in 0..n_land {
            let p = format!("k{k}.m{m}");
            dv.lambda_p.push(vars(&mut b, &format!("{p}.lambda_p"), 2 * d, 0.0));
            dv.lambda_s
                .push(b.add_var(format!("{p}.lambda_s"), f64::NEG_INFINITY, f64::INFINITY));
            dv.lambda_z.push(vars(&mut b, &format!("{p}.lambda_z"), d, 0.0));
            dv.rho1.push(vars(&mut b, &format!("{p}.rho1"), d * np, 0.0));
            dv.rho2.push(vars(&mut b, &format!("{p}.rho2"), d * np, 0.0));
            dv.eta1.push(vars(&mut b, &format!("{p}.eta1"), d * np, 0.0));
            dv.eta2.push(vars(&mut b, &format!("{p}.eta2"), d * np, 0.0));
            dv.beta.push(vars(&mut b, &format!("{p}.beta"), np * nc, 0.0));
        }

        // (i) worst case of the objective bound over the cell and MAD auxiliaries.
        let mut worst = row.r.clone();
        worst.add_term(delta, 1.0);
        for c in 0..nc {
            worst.add_term(dv.lambda_x[c], -body.offsets[c]);
        }
        for (m, prob) in ctx.prob.iter().enumerate() {
            for q in 0..d {
                for j in 0..np {
                    let g = -prob.u[(q, j)] + prob.landmark[q];
                    worst.add_term(dv.rho1[m][q * np + j], g);
                    worst.add_term(dv.rho2[m][q * np + j], -g);
                }
                worst.add_term(dv.lambda_z[m][q], prob.sigma_m);
            }
            for r in 0..2 * d {
                worst.add_term(dv.lambda_p[m][r], -prob.b_p[r]);
            }
            worst.add_term(dv.lambda_s[m], 1.0);
        }
        b.add_le(format!("k{k}.worst"), worst);

        // (ii) stationarity in x.
        for q in 0..d {
            let mut e = LinExpr::constant(-row.c_x[q]);
            for c in 0..nc {
                e.add_term(dv.lambda_x[c], body.normals[(c, q)]);
            }
            for (m, prob) in ctx.prob.iter().enumerate() {
                for r in 0..2 * d {
                    e.add_term(dv.lambda_p[m][r], prob.a_x[(r, q)]);
                }
                for j in 0..np {
                    e.add_term(dv.rho1[m][q * np + j], 1.0);
                    e.add_term(dv.rho2[m][q * np + j], -1.0);
                }
            }
            b.add_eq(format!("k{k}.stat_x[{q}]"), e);
        }

        for (m, prob) in ctx.prob.iter().enumerate() {
            // (iii) stationarity in the MAD auxiliaries of the objective bound.
            for i in 0..d * np {
                b.add_eq(
                    format!("k{k}.m{m}.rho[{i}]"),
                    LinExpr::var(dv.rho1[m][i]) + LinExpr::var(dv.rho2[m][i]),
                );
            }
            for j in 0..np {
                // (iv) worst case of dual feasibility for P_j.
                let mut e = row.c_p[m * np + j].clone();
                for c in 0..nc {
                    e.add_term(dv.beta[m][j * nc + c], -body.offsets[c]);
                }
                for q in 0..d {
                    let g = -prob.u[(q, j)] + prob.landmark[q];
                    e.add_term(dv.eta1[m][q * np + j], g);
                    e.add_term(dv.eta2[m][q * np + j], -g);
                }
                for r in 0..2 * d {
                    e.add_term(dv.lambda_p[m][r], -prob.a_p[(r, j)]);
                }
                e.add_term(dv.lambda_s[m], -1.0);
                b.add_le(format!("k{k}.m{m}.p[{j}]"), e);

                // (v) stationarity in x of that worst case.
                for q in 0..d {
                    let mut e = LinExpr::zero();
                    for c in 0..nc {
                        e.add_term(dv.beta[m][j * nc + c], body.normals[(c, q)]);
                    }
                    e.add_term(dv.eta1[m][q * np + j], 1.0);
                    e.add_term(dv.eta2[m][q * np + j], -1.0);
                    b.add_eq(format!("k{k}.m{m}.x[{j}][{q}]"), e);
                }
            }
            // (vi) stationarity in the MAD auxiliaries z_qj.
            for q in 0..d {
                for j in 0..np {
                    let mut e = LinExpr::var(dv.lambda_z[m][q]);
                    e.add_term(dv.eta1[m][q * np + j], -1.0);
                    e.add_term(dv.eta2[m][q * np + j], -1.0);
                    b.add_eq(format!("k{k}.m{m}.z[{q}][{j}]"), e);
                }
            }
        }
        duals.push(dv);
    }

    AssembledLp {
        lp: b.build(),
        route: Route::Hand,
        layout: ctx.layout,
        delta_vars,
        kinds: ctx.rows.iter().map(|r| r.kind).collect(),
        omega,
        duals: Some(duals),
        has_goal_constraint: false,
    }
}
