//! Splitting a node into independent subproblems. Once the variables that
//! couple instances (global change flags, selection flags) are fixed, the
//! rows fall apart into one block per instance and each block can be
//! searched on its own instead of branching over their product.

use crate::formulation::{MiqpProblem, Objective, Row, VariableSpace};
use crate::scalar::Scalar;

use super::relax::FIX_WIDTH;

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

fn free<T: Scalar>(lo: &[T], hi: &[T], k: usize) -> bool {
    hi[k] - lo[k] > T::lit(FIX_WIDTH)
}

/// Connected components of the free variables (rows are the edges), in
/// order of their smallest variable index. Returns `None` unless at least
/// two components contain free integral variables.
pub(crate) fn components<T: Scalar>(problem: &MiqpProblem<T>, lo: &[T], hi: &[T]) -> Option<Vec<Vec<usize>>> {
    let n = problem.n_vars();
    let mut parent: Vec<usize> = (0..n).collect();
    for row in &problem.rows {
        let mut first = None;
        for &(k, a) in &row.coeffs {
            if a == T::zero() || !free(lo, hi, k) {
                continue;
            }
            match first {
                None => first = Some(k),
                Some(f) => {
                    let (ra, rb) = (find(&mut parent, f), find(&mut parent, k));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut parts: Vec<Vec<usize>> = Vec::new();
    for k in 0..n {
        if !free(lo, hi, k) {
            continue;
        }
        let r = find(&mut parent, k);
        if slot[r] == usize::MAX {
            slot[r] = parts.len();
            parts.push(Vec::new());
        }
        parts[slot[r]].push(k);
    }
    let integral = parts
        .iter()
        .filter(|p| p.iter().any(|&k| problem.vars.get(k).kind.is_integral()))
        .count();
    (integral >= 2).then_some(parts)
}

/// Restriction of `problem` to `vars` with every other variable fixed at
/// the midpoint of its (degenerate) box. The objective constant is zero.
pub(crate) fn subproblem<T: Scalar>(problem: &MiqpProblem<T>, lo: &[T], hi: &[T], vars: &[usize]) -> MiqpProblem<T> {
    let n = problem.n_vars();
    let mut local = vec![usize::MAX; n];
    let mut space = VariableSpace::new();
    for (pos, &k) in vars.iter().enumerate() {
        let v = problem.vars.get(k);
        local[k] = pos;
        space
            .add(v.tag, v.kind, lo[k], hi[k])
            .expect("tags are unique and boxes non-empty");
    }
    let half = T::lit(0.5);
    let mut rows = Vec::new();
    for row in &problem.rows {
        if !row.coeffs.iter().any(|&(k, _)| local[k] != usize::MAX) {
            continue;
        }
        let mut coeffs = Vec::new();
        let mut rhs = row.rhs;
        for &(k, a) in &row.coeffs {
            if local[k] == usize::MAX {
                rhs -= a * (lo[k] + hi[k]) * half;
            } else {
                coeffs.push((local[k], a));
            }
        }
        rows.push(Row {
            coeffs,
            sense: row.sense,
            rhs,
            role: row.role,
            indicator: None,
        });
    }
    let obj = &problem.objective;
    MiqpProblem {
        vars: space,
        rows,
        objective: Objective {
            quadratic: vars.iter().map(|&k| obj.quadratic[k]).collect(),
            linear: vars.iter().map(|&k| obj.linear[k]).collect(),
            constant: T::zero(),
        },
        meta: problem.meta.clone(),
        big_m: problem.big_m.clone(),
    }
}
