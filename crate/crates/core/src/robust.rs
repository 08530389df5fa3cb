//! Symbolic coefficients that are affine in outer decisions `theta` and in uncertain
//! parameters `xi`, with `theta x xi` cross terms, plus the LP-duality robust counterpart of
//! a constraint that must hold for every `xi` in a polyhedron.
//!
//! These let a parametric inner LP be written once as a [`Program<BiAffine>`], dualized
//! mechanically with [`safe_field_lp::dualize`], and turned into ordinary rows of an outer
//! program.

use std::collections::BTreeMap;

use safe_field_lp::{Coefficient, LinExpr, LpBuilder, VarId};

/// `constant + sum theta_i a_i + sum xi_m b_m + sum theta_i xi_m c_im`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BiAffine {
    pub constant: f64,
    pub theta: Vec<(usize, f64)>,
    pub xi: Vec<(usize, f64)>,
    pub cross: Vec<(usize, usize, f64)>,
}

impl BiAffine {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            ..Self::default()
        }
    }

    /// Lifts an affine expression over outer variables.
    pub fn from_theta(e: &LinExpr) -> Self {
        Self {
            constant: e.constant,
            theta: e.terms.iter().map(|&(v, c)| (v.0, c)).collect(),
            ..Self::default()
        }
    }

    pub fn xi_term(m: usize, c: f64) -> Self {
        Self {
            xi: vec![(m, c)],
            ..Self::default()
        }
    }

    pub fn has_theta(&self) -> bool {
        self.theta.iter().any(|t| t.1 != 0.0) || self.cross.iter().any(|t| t.2 != 0.0)
    }

    pub fn has_xi(&self) -> bool {
        self.xi.iter().any(|t| t.1 != 0.0) || self.cross.iter().any(|t| t.2 != 0.0)
    }

    pub fn add(&mut self, other: &BiAffine) {
        self.constant += other.constant;
        self.theta.extend_from_slice(&other.theta);
        self.xi.extend_from_slice(&other.xi);
        self.cross.extend_from_slice(&other.cross);
    }

    pub fn scaled(&self, s: f64) -> BiAffine {
        BiAffine {
            constant: self.constant * s,
            theta: self.theta.iter().map(|&(i, c)| (i, c * s)).collect(),
            xi: self.xi.iter().map(|&(m, c)| (m, c * s)).collect(),
            cross: self.cross.iter().map(|&(i, m, c)| (i, m, c * s)).collect(),
        }
    }

    /// Product with the outer variable `var`. Only defined for coefficients free of
    /// `theta`, otherwise the product would be quadratic in the outer decisions.
    pub fn times_theta(&self, var: usize) -> BiAffine {
        assert!(
            !self.has_theta(),
            "product of a theta-dependent coefficient with an outer variable"
        );
        BiAffine {
            constant: 0.0,
            theta: if self.constant != 0.0 {
                vec![(var, self.constant)]
            } else {
                Vec::new()
            },
            xi: Vec::new(),
            cross: self.xi.iter().map(|&(m, c)| (var, m, c)).collect(),
        }
    }

    /// Splits into `a0(theta)` and `a_m(theta)` per uncertain coordinate.
    pub fn split(&self) -> (LinExpr, BTreeMap<usize, LinExpr>) {
        let mut a0 = LinExpr::constant(self.constant);
        for &(i, c) in &self.theta {
            a0.add_term(VarId(i), c);
        }
        let mut a: BTreeMap<usize, LinExpr> = BTreeMap::new();
        for &(m, c) in &self.xi {
            a.entry(m).or_default().constant += c;
        }
        for &(i, m, c) in &self.cross {
            a.entry(m).or_default().add_term(VarId(i), c);
        }
        (a0, a)
    }
}

impl Coefficient for BiAffine {
    fn zero() -> Self {
        BiAffine::default()
    }

    fn from_f64(value: f64) -> Self {
        BiAffine::constant(value)
    }

    fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    fn is_zero(&self) -> bool {
        self.constant == 0.0 && !self.has_theta() && !self.has_xi()
    }
}

/// Polyhedron `{xi : G xi <= g}` stored by rows and by columns.
#[derive(Debug, Clone)]
pub struct UncertaintySet {
    pub n_xi: usize,
    rows: Vec<(Vec<(usize, f64)>, f64)>,
    columns: Vec<Vec<(usize, f64)>>,
}

impl UncertaintySet {
    pub fn new(n_xi: usize) -> Self {
        Self {
            n_xi,
            rows: Vec::new(),
            columns: vec![Vec::new(); n_xi],
        }
    }

    /// Adds `sum coeffs . xi <= rhs`.
    pub fn push(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        let r = self.rows.len();
        for &(m, c) in &coeffs {
            if c != 0.0 {
                self.columns[m].push((r, c));
            }
        }
        self.rows.push((coeffs, rhs));
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Adds rows to `builder` enforcing `expr(theta, xi) <= 0` for every `xi` in the set.
    ///
    /// By LP duality, `max_xi {a(theta) . xi : G xi <= g} + a0(theta) <= 0` holds iff some
    /// `mu >= 0` has `G' mu = a(theta)` and `g . mu + a0(theta) <= 0`. The set must be
    /// nonempty.
    pub fn add_robust_le(&self, builder: &mut LpBuilder, name: &str, expr: &BiAffine) {
        let (a0, a) = expr.split();
        if a.values().all(|e| e.is_constant() && e.constant == 0.0) {
            builder.add_le(name, a0);
            return;
        }
        let mu: Vec<VarId> = (0..self.rows.len())
            .map(|r| builder.add_var(format!("{name}.mu[{r}]"), 0.0, f64::INFINITY))
            .collect();
        for m in 0..self.n_xi {
            let mut e = LinExpr::zero();
            for &(r, c) in &self.columns[m] {
                e.add_term(mu[r], c);
            }
            if let Some(am) = a.get(&m) {
                e.add_scaled(am, -1.0);
            }
            if e.terms.is_empty() && e.constant == 0.0 {
                continue;
            }
            builder.add_eq(format!("{name}.xi[{m}]"), e);
        }
        let mut top = a0;
        for (r, (_, g)) in self.rows.iter().enumerate() {
            top.add_term(mu[r], *g);
        }
        builder.add_le(name, top);
    }

    /// Equality for every `xi`: enforced as two robust inequalities.
    pub fn add_robust_eq(&self, builder: &mut LpBuilder, name: &str, expr: &BiAffine) {
        if !expr.has_xi() {
            builder.add_eq(name, expr.split().0);
            return;
        }
        self.add_robust_le(builder, &format!("{name}.le"), expr);
        self.add_robust_le(builder, &format!("{name}.ge"), &expr.negated());
    }
}
