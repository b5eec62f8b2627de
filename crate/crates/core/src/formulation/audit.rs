use std::collections::{HashMap, HashSet};

use crate::domain::Sense;
use crate::scalar::Scalar;

use super::{MiqpProblem, RowRole};

/// An indicator row that some box point still violates after its binary
/// was switched to the relaxing value.
#[derive(Clone, Debug, PartialEq)]
pub struct BigMViolation<T> {
    pub row: usize,
    pub role: RowRole,
    pub indicator: usize,
    pub big_m: T,
    /// Largest violation over the box corners.
    pub excess: T,
}

/// Checks every indicator row: with its binary fixed to the relaxing value,
/// the row must hold for every point of the variable box.
///
/// Bounds of the remaining variables are first tightened by the two-variable
/// rows that also mention the binary (the score product `u` is bounded that
/// way once `y` is fixed). Linear rows attain their extremes at box corners,
/// so the worst case is computed coefficient by coefficient.
pub fn audit_big_m<T: Scalar>(problem: &MiqpProblem<T>, tol: T) -> Vec<BigMViolation<T>> {
    let mut by_var: HashMap<usize, Vec<usize>> = HashMap::new();
    for (r, row) in problem.rows.iter().enumerate() {
        for &(k, _) in &row.coeffs {
            by_var.entry(k).or_default().push(r);
        }
    }
    let base_lo = problem.vars.lower_bounds();
    let base_hi = problem.vars.upper_bounds();

    let mut out = Vec::new();
    let mut seen: HashSet<(usize, u64)> = HashSet::new();
    for row in &problem.rows {
        let Some(ind) = row.indicator else { continue };
        let key = (ind.var, ind.relaxed_at.to_f64_lossy().to_bits());
        if !seen.insert(key) {
            continue;
        }
        let mut lo = base_lo.clone();
        let mut hi = base_hi.clone();
        lo[ind.var] = ind.relaxed_at;
        hi[ind.var] = ind.relaxed_at;
        for &pr in by_var.get(&ind.var).into_iter().flatten() {
            let same = problem.rows[pr]
                .indicator
                .is_some_and(|i| i.var == ind.var && i.relaxed_at == ind.relaxed_at);
            if same {
                continue;
            }
            propagate_pair(problem, pr, ind.var, &mut lo, &mut hi);
        }
        for &ar in by_var.get(&ind.var).into_iter().flatten() {
            let audited = &problem.rows[ar];
            match audited.indicator {
                Some(i) if i.var == ind.var && i.relaxed_at == ind.relaxed_at => {}
                _ => continue,
            }
            let excess = worst_violation(audited.sense, &audited.coeffs, audited.rhs, &lo, &hi);
            if excess > tol {
                out.push(BigMViolation {
                    row: ar,
                    role: audited.role,
                    indicator: ind.var,
                    big_m: ind.big_m,
                    excess,
                });
            }
        }
    }
    out.sort_by_key(|v| v.row);
    out
}

/// Tightens the box of the one other variable of a two-term row. Rows
/// relaxed by the same fixing are skipped by the caller.
fn propagate_pair<T: Scalar>(problem: &MiqpProblem<T>, r: usize, fixed: usize, lo: &mut [T], hi: &mut [T]) {
    let row = &problem.rows[r];
    if row.coeffs.len() != 2 {
        return;
    }
    let Some(&(other, a)) = row.coeffs.iter().find(|(k, _)| *k != fixed) else {
        return;
    };
    if a == T::zero() {
        return;
    }
    let fixed_part: T = row
        .coeffs
        .iter()
        .filter(|(k, _)| *k == fixed)
        .map(|&(k, c)| c * lo[k])
        .sum();
    let bound = (row.rhs - fixed_part) / a;
    // a * x (sense) rhs - fixed_part
    let upper = matches!(
        (row.sense, a > T::zero()),
        (Sense::Le, true) | (Sense::Ge, false) | (Sense::Eq, _)
    );
    let lower = matches!(
        (row.sense, a > T::zero()),
        (Sense::Ge, true) | (Sense::Le, false) | (Sense::Eq, _)
    );
    if upper {
        hi[other] = hi[other].min(bound);
    }
    if lower {
        lo[other] = lo[other].max(bound);
    }
}

/// Largest violation of `coeffs . x (sense) rhs` over the box.
fn worst_violation<T: Scalar>(sense: Sense, coeffs: &[(usize, T)], rhs: T, lo: &[T], hi: &[T]) -> T {
    let (mut min_act, mut max_act) = (T::zero(), T::zero());
    for &(k, a) in coeffs {
        let (p, q) = (a * lo[k], a * hi[k]);
        min_act += p.min(q);
        max_act += p.max(q);
    }
    let over = max_act - rhs;
    let under = rhs - min_act;
    let v = match sense {
        Sense::Le => over,
        Sense::Ge => under,
        Sense::Eq => over.max(under),
    };
    v.max(T::zero())
}
