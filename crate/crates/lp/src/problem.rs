use std::collections::HashSet;
use std::fmt::{self, Debug, Write as _};

use crate::error::LpError;
use crate::expr::LinExpr;

/// Index of a variable within a [`Program`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    pub fn flipped(self) -> Sense {
        match self {
            Sense::Minimize => Sense::Maximize,
            Sense::Maximize => Sense::Minimize,
        }
    }
}

/// Scalar type usable as an LP coefficient.
///
/// Dualization only moves, transposes and negates coefficients, so it works for any type
/// implementing this trait, including symbolic expressions.
pub trait Coefficient: Clone + Debug {
    fn zero() -> Self;
    fn from_f64(value: f64) -> Self;
    fn negated(&self) -> Self;
    fn is_zero(&self) -> bool;
}

impl Coefficient for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(value: f64) -> Self {
        value
    }
    fn negated(&self) -> Self {
        -*self
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

/// One sparse row `sum(coeffs) (<= | =) rhs`; the relation is given by the block it sits in.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint<T> {
    pub name: String,
    pub coeffs: Vec<(usize, T)>,
    pub rhs: T,
}

/// Standard-form linear program:
///
/// ```text
/// optimize   cost' x
/// subject to A_ub x <= b_ub
///            A_eq x  = b_eq
///            lower <= x <= upper
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Program<T> {
    pub sense: Sense,
    pub vars: Vec<Variable>,
    pub cost: Vec<T>,
    pub ub: Vec<Constraint<T>>,
    pub eq: Vec<Constraint<T>>,
    /// Free-form header lines carried into [`StandardLp::dump`].
    pub comments: Vec<String>,
}

pub type StandardLp = Program<f64>;

impl<T: Coefficient> Program<T> {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            vars: Vec::new(),
            cost: Vec::new(),
            ub: Vec::new(),
            eq: Vec::new(),
            comments: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.ub.len() + self.eq.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, cost: T) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        self.cost.push(cost);
        VarId(self.vars.len() - 1)
    }

    pub fn var_index(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    /// Checks dimensions, index ranges, bound ordering and name uniqueness.
    pub fn validate(&self) -> Result<(), LpError> {
        if self.cost.len() != self.vars.len() {
            return Err(LpError::Malformed(format!(
                "{} costs for {} variables",
                self.cost.len(),
                self.vars.len()
            )));
        }
        let mut names = HashSet::with_capacity(self.vars.len());
        for v in &self.vars {
            if !names.insert(v.name.as_str()) {
                return Err(LpError::Malformed(format!("duplicate variable name {}", v.name)));
            }
            if v.lower > v.upper || v.lower.is_nan() || v.upper.is_nan() {
                return Err(LpError::Malformed(format!(
                    "variable {} has bounds [{}, {}]",
                    v.name, v.lower, v.upper
                )));
            }
        }
        let mut row_names = HashSet::with_capacity(self.num_rows());
        for row in self.ub.iter().chain(&self.eq) {
            if !row_names.insert(row.name.as_str()) {
                return Err(LpError::Malformed(format!("duplicate row name {}", row.name)));
            }
            if let Some(&(j, _)) = row.coeffs.iter().find(|(j, _)| *j >= self.vars.len()) {
                return Err(LpError::Malformed(format!(
                    "row {} references variable {j} of {}",
                    row.name,
                    self.vars.len()
                )));
            }
        }
        Ok(())
    }
}

impl StandardLp {
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of rows and bounds at `x` (zero when feasible).
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let row_value = |row: &Constraint<f64>| -> f64 {
            row.coeffs.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
        };
        let ub = self
            .ub
            .iter()
            .map(|r| (row_value(r) - r.rhs).max(0.0))
            .fold(0.0, f64::max);
        let eq = self
            .eq
            .iter()
            .map(|r| (row_value(r) - r.rhs).abs())
            .fold(0.0, f64::max);
        let bounds = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &xv)| (v.lower - xv).max(xv - v.upper).max(0.0))
            .fold(0.0, f64::max);
        ub.max(eq).max(bounds)
    }

    /// Plain-text listing of the program in a stable order, for debugging.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# standard-form LP");
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        let sense = match self.sense {
            Sense::Minimize => "minimize",
            Sense::Maximize => "maximize",
        };
        let _ = writeln!(
            out,
            "# sense={sense} vars={} ub_rows={} eq_rows={}",
            self.vars.len(),
            self.ub.len(),
            self.eq.len()
        );
        let _ = writeln!(out, "[variables]");
        for (j, v) in self.vars.iter().enumerate() {
            let _ = writeln!(
                out,
                "{j}\t{}\t[{}, {}]\tcost={}",
                v.name, v.lower, v.upper, self.cost[j]
            );
        }
        for (block, rel, rows) in [("[ub]", "<=", &self.ub), ("[eq]", "=", &self.eq)] {
            let _ = writeln!(out, "{block}");
            for row in rows.iter() {
                let _ = write!(out, "{}:", row.name);
                for &(j, a) in &row.coeffs {
                    let _ = write!(out, " {a:+}*{}", self.vars[j].name);
                }
                let _ = writeln!(out, " {rel} {}", row.rhs);
            }
        }
        out
    }
}

/// Incremental builder for numeric programs whose rows are written as `expr <= 0` or
/// `expr = 0`.
#[derive(Debug, Clone)]
pub struct LpBuilder {
    lp: StandardLp,
}

impl LpBuilder {
    pub fn new(sense: Sense) -> Self {
        Self {
            lp: StandardLp::new(sense),
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.lp.add_var(name, lower, upper, 0.0)
    }

    pub fn num_vars(&self) -> usize {
        self.lp.vars.len()
    }

    pub fn set_cost(&mut self, var: VarId, cost: f64) {
        self.lp.cost[var.0] = cost;
    }

    pub fn set_upper(&mut self, var: VarId, upper: f64) {
        self.lp.vars[var.0].upper = upper;
    }

    pub fn set_lower(&mut self, var: VarId, lower: f64) {
        self.lp.vars[var.0].lower = lower;
    }

    /// Adds the row `expr <= 0`.
    pub fn add_le(&mut self, name: impl Into<String>, expr: LinExpr) {
        let row = Self::row(name.into(), expr);
        self.lp.ub.push(row);
    }

    /// Adds the row `expr = 0`.
    pub fn add_eq(&mut self, name: impl Into<String>, expr: LinExpr) {
        let row = Self::row(name.into(), expr);
        self.lp.eq.push(row);
    }

    pub fn comment(&mut self, line: impl Into<String>) {
        self.lp.comments.push(line.into());
    }

    pub fn build(self) -> StandardLp {
        self.lp
    }

    fn row(name: String, expr: LinExpr) -> Constraint<f64> {
        let expr = expr.compact();
        Constraint {
            name,
            coeffs: expr.terms.iter().map(|&(v, c)| (v.0, c)).collect(),
            rhs: -expr.constant,
        }
    }
}
