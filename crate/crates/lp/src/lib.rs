//! Standard-form linear programs for robust controller synthesis.
//!
//! The crate provides three things:
//!
//! * [`Program`], a sparse standard-form LP generic over its coefficient type, with
//!   [`StandardLp`] as the numeric instance and [`LpBuilder`] for assembling one from
//!   [`LinExpr`] rows;
//! * [`dualize`], the textbook LP dual, usable on numeric programs and on programs whose
//!   costs, right-hand sides and matrix entries are symbolic;
//! * [`solve_lp`], backed by a dense two-phase simplex for small programs and by HiGHS for
//!   large sparse ones. Both report dual values.

mod dense;
mod dual;
mod error;
mod expr;
mod highs_backend;
mod problem;
mod solution;

pub use dual::{dualize, dual_name, DualSign};
pub use error::LpError;
pub use expr::LinExpr;
pub use problem::{Coefficient, Constraint, LpBuilder, Program, Sense, StandardLp, VarId, Variable};
pub use solution::{solve_lp, solve_lp_with, Backend, LpSolution, LpStatus, SolverOptions};
