use crate::problem::{Coefficient, Constraint, Program, Sense, Variable};

/// Sign restriction of a primal variable as seen by the dualizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualSign {
    NonNegative,
    NonPositive,
    Free,
}

/// Name of the dual object attached to a primal row or variable. Dualizing twice restores
/// the original name.
pub fn dual_name(name: &str) -> String {
    match name.strip_prefix("dual[").and_then(|s| s.strip_suffix(']')) {
        Some(inner) => inner.to_string(),
        None => format!("dual[{name}]"),
    }
}

fn sign_of(var: &Variable) -> DualSign {
    if var.lower == 0.0 {
        DualSign::NonNegative
    } else if var.upper == 0.0 {
        DualSign::NonPositive
    } else {
        DualSign::Free
    }
}

/// Textbook LP dual.
///
/// Bounds other than a plain sign restriction are first rewritten as inequality rows named
/// `lo[x]` / `up[x]`. For a maximization primal the dual is
///
/// ```text
/// minimize   b_ub' y + b_eq' w
/// subject to (A_ub' y + A_eq' w)_j  >= c_j   (x_j >= 0)
///                                    =  c_j   (x_j free)
///                                    <= c_j   (x_j <= 0)
///            y >= 0, w free
/// ```
///
/// and for a minimization primal the row relations flip and `y <= 0`. `>=` rows are stored
/// negated. Dual variables are ordered as the primal `<=` rows, then the bound rows, then
/// the equality rows; dual rows follow primal variable order. With this sign convention the
/// optimal dual variables equal the sensitivities `d(objective)/d(rhs)` reported by
/// [`crate::solve_lp`].
pub fn dualize<T: Coefficient>(primal: &Program<T>) -> Program<T> {
    let mut ub_rows: Vec<Constraint<T>> = primal.ub.clone();
    let mut signs = Vec::with_capacity(primal.vars.len());
    for (j, var) in primal.vars.iter().enumerate() {
        let sign = sign_of(var);
        signs.push(sign);
        let needs_lower = var.lower.is_finite() && sign != DualSign::NonNegative;
        let needs_upper = var.upper.is_finite() && sign != DualSign::NonPositive;
        if needs_lower {
            ub_rows.push(Constraint {
                name: format!("lo[{}]", var.name),
                coeffs: vec![(j, T::from_f64(-1.0))],
                rhs: T::from_f64(-var.lower),
            });
        }
        if needs_upper {
            ub_rows.push(Constraint {
                name: format!("up[{}]", var.name),
                coeffs: vec![(j, T::from_f64(1.0))],
                rhs: T::from_f64(var.upper),
            });
        }
    }

    let mut dual = Program::new(primal.sense.flipped());
    dual.comments = primal.comments.clone();
    let (ub_lower, ub_upper) = match primal.sense {
        Sense::Maximize => (0.0, f64::INFINITY),
        Sense::Minimize => (f64::NEG_INFINITY, 0.0),
    };
    for row in &ub_rows {
        dual.add_var(dual_name(&row.name), ub_lower, ub_upper, row.rhs.clone());
    }
    for row in &primal.eq {
        dual.add_var(
            dual_name(&row.name),
            f64::NEG_INFINITY,
            f64::INFINITY,
            row.rhs.clone(),
        );
    }

    // Transpose: column j of the primal becomes dual row j.
    let mut columns: Vec<Vec<(usize, T)>> = vec![Vec::new(); primal.vars.len()];
    for (i, row) in ub_rows.iter().chain(&primal.eq).enumerate() {
        for (j, a) in &row.coeffs {
            columns[*j].push((i, a.clone()));
        }
    }

    for (j, column) in columns.into_iter().enumerate() {
        let name = dual_name(&primal.vars[j].name);
        let cost = primal.cost[j].clone();
        // `Greater` means column' y >= c_j, stored negated.
        let relation = match (primal.sense, signs[j]) {
            (_, DualSign::Free) => Relation::Equal,
            (Sense::Maximize, DualSign::NonNegative) | (Sense::Minimize, DualSign::NonPositive) => {
                Relation::Greater
            }
            (Sense::Maximize, DualSign::NonPositive) | (Sense::Minimize, DualSign::NonNegative) => {
                Relation::Less
            }
        };
        match relation {
            Relation::Equal => dual.eq.push(Constraint {
                name,
                coeffs: column,
                rhs: cost,
            }),
            Relation::Less => dual.ub.push(Constraint {
                name,
                coeffs: column,
                rhs: cost,
            }),
            Relation::Greater => dual.ub.push(Constraint {
                name,
                coeffs: column.into_iter().map(|(i, a)| (i, a.negated())).collect(),
                rhs: cost.negated(),
            }),
        }
    }
    dual
}

enum Relation {
    Less,
    Equal,
    Greater,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::StandardLp;

    #[test]
    fn canonical_pair() {
        // max c'x, Ax <= b, x >= 0  ->  min b'y, A'y >= c, y >= 0
        let mut p = StandardLp::new(Sense::Maximize);
        p.add_var("x0", 0.0, f64::INFINITY, 3.0);
        p.add_var("x1", 0.0, f64::INFINITY, 5.0);
        p.ub.push(Constraint {
            name: "r0".into(),
            coeffs: vec![(0, 1.0), (1, 2.0)],
            rhs: 4.0,
        });
        let d = dualize(&p);
        assert_eq!(d.sense, Sense::Minimize);
        assert_eq!(d.vars.len(), 1);
        assert_eq!(d.vars[0].name, "dual[r0]");
        assert_eq!((d.vars[0].lower, d.vars[0].upper), (0.0, f64::INFINITY));
        assert_eq!(d.cost, vec![4.0]);
        // Stored negated: -y <= -3, -2y <= -5.
        assert_eq!(d.ub[0].coeffs, vec![(0, -1.0)]);
        assert_eq!(d.ub[0].rhs, -3.0);
        assert_eq!(d.ub[1].coeffs, vec![(0, -2.0)]);
        assert_eq!(d.ub[1].rhs, -5.0);
        assert_eq!(d.ub[1].name, "dual[x1]");
    }

    #[test]
    fn finite_bounds_become_rows() {
        let mut p = StandardLp::new(Sense::Minimize);
        p.add_var("x", -1.0, 2.0, 1.0);
        let d = dualize(&p);
        let names: Vec<_> = d.vars.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, vec!["dual[lo[x]]", "dual[up[x]]"]);
        // Free primal variable gives an equality dual row.
        assert_eq!(d.eq.len(), 1);
    }

    #[test]
    fn names_round_trip() {
        assert_eq!(dual_name(&dual_name("row")), "row");
    }
}
