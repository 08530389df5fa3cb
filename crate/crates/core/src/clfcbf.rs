//! Linear CLF and CBF conditions as rows `c_x . x + c_p . P + r <= 0`, with `c_p` and `r`
//! affine in the gain variables.
//!
//! With `V(x) = v . (x - o)` and `h_j(x) = -(a_j . x + b_j)` for the cell row `a_j x + b_j <= 0`,
//! the conditions `dV/dt + alpha_v V <= 0` and `-dh_j/dt - alpha_h h_j <= 0` under
//! `u = K_P P + K_b` share one shape: for a weight `w` (`v` for the CLF, `a_j` for a CBF),
//! `c_x = (A + alpha I)' w`, `c_p = K_P' B' w` and `r = w' B K_b + const`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use safe_field_lp::{LinExpr, VarId};

use crate::basis::GainLayout;
use crate::geometry::ConvexCell;
use crate::planning::ExitAssignment;

/// Affine expression in the gain variables.
pub type AffineInGains = LinExpr;

/// `dx/dt = A x + B u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Dynamics {
    pub fn single_integrator(d: usize) -> Self {
        Self {
            a: DMatrix::zeros(d, d),
            b: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    pub fn rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum RowKind {
    Clf,
    Cbf { facet: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub kind: RowKind,
    pub c_x: DVector<f64>,
    /// One entry per stacked PMF coordinate (landmark-major).
    pub c_p: Vec<AffineInGains>,
    pub r: AffineInGains,
}

fn weighted_row(
    kind: RowKind,
    w: &DVector<f64>,
    alpha: f64,
    constant: f64,
    dynamics: &Dynamics,
    matrices: &[DMatrix<f64>],
    layout: &GainLayout,
) -> ConstraintRow {
    let d = dynamics.dim();
    let c_x = (&dynamics.a + DMatrix::identity(d, d) * alpha).transpose() * w;
    let btw = dynamics.b.transpose() * w;
    let np = matrices[0].ncols();
    let mut c_p = Vec::with_capacity(layout.n_landmarks * np);
    for m in 0..layout.n_landmarks {
        for j in 0..np {
            let mut e = LinExpr::zero();
            for (i, r) in matrices.iter().enumerate() {
                for a in 0..layout.n_u {
                    if btw[a] == 0.0 {
                        continue;
                    }
                    for b in 0..d {
                        let coef = btw[a] * r[(b, j)];
                        if coef != 0.0 {
                            e.add_term(VarId(layout.k(m, i, a, b)), coef);
                        }
                    }
                }
            }
            c_p.push(e);
        }
    }
    let mut r = LinExpr::constant(constant);
    for a in 0..layout.n_u {
        if btw[a] != 0.0 {
            r.add_term(VarId(layout.k_b(a)), btw[a]);
        }
    }
    ConstraintRow { kind, c_x, c_p, r }
}

/// `v'(A x + B(K_P P + K_b)) + alpha_v v'(x - o) <= 0`.
pub fn build_clf_row(
    exit: &ExitAssignment,
    dynamics: &Dynamics,
    alpha_v: f64,
    matrices: &[DMatrix<f64>],
    layout: &GainLayout,
) -> ConstraintRow {
    let constant = -alpha_v * exit.v.dot(&exit.o);
    weighted_row(RowKind::Clf, &exit.v, alpha_v, constant, dynamics, matrices, layout)
}

/// `a_j (A x + B(K_P P + K_b)) + alpha_h (a_j x + b_j) <= 0` for every obstacle facet `j`,
/// i.e. `dh_j/dt + alpha_h h_j >= 0`.
pub fn build_cbf_rows(
    cell: &ConvexCell,
    obstacle_rows: &[usize],
    dynamics: &Dynamics,
    alpha_h: f64,
    matrices: &[DMatrix<f64>],
    layout: &GainLayout,
) -> Vec<ConstraintRow> {
    obstacle_rows
        .iter()
        .map(|&j| {
            let w = cell.body.normal(j);
            let constant = alpha_h * cell.body.offsets[j];
            weighted_row(
                RowKind::Cbf { facet: j },
                &w,
                alpha_h,
                constant,
                dynamics,
                matrices,
                layout,
            )
        })
        .collect()
}

/// `c_x . x + c_p(gains) . P + r(gains)`; negative means strictly satisfied.
pub fn evaluate_row(row: &ConstraintRow, gains: &[f64], x: &DVector<f64>, p: &DVector<f64>) -> f64 {
    let mut v = row.c_x.dot(x) + row.r.evaluate(gains);
    for (c, &pj) in row.c_p.iter().zip(p.iter()) {
        if pj != 0.0 {
            v += c.evaluate(gains) * pj;
        }
    }
    v
}

/// `c_p` evaluated at concrete gains.
pub fn numeric_c_p(row: &ConstraintRow, gains: &[f64]) -> DVector<f64> {
    DVector::from_iterator(row.c_p.len(), row.c_p.iter().map(|c| c.evaluate(gains)))
}
