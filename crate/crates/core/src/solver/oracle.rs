use std::time::Instant;

use crate::domain::Sense;
use crate::error::{Error, Result};
use crate::formulation::{MiqpProblem, VarKind};
use crate::scalar::Scalar;

use super::dense_qp::{solve_dense_qp, DenseQp, DenseQpOutcome};
use super::{SolveResult, SolveStatus};

pub const DEFAULT_MAX_BINARIES: usize = 20;

/// Curvature added to continuous variables without a quadratic term so the
/// dense solver sees a strictly convex problem.
const REGULARISATION: f64 = 1e-10;
const ROW_TOL: f64 = 1e-9;

/// Enumerates every assignment of the integral variables and solves the
/// continuous restriction of each with a dense active-set QP solver.
///
/// Assignments are generated depth-first; a partial assignment is dropped
/// as soon as a row over integral variables only is violated, which never
/// removes a feasible completion. Refuses problems with more than
/// `max_binaries` binaries (or an equally large integer domain).
pub fn brute_force_oracle<T: Scalar>(problem: &MiqpProblem<T>, max_binaries: usize) -> Result<SolveResult<T>> {
    problem.validate()?;
    let start = Instant::now();
    let binaries = problem.vars.count_kind(VarKind::Binary);
    if binaries > max_binaries {
        return Err(Error::Refused(format!(
            "{binaries} binaries exceed the enumeration limit {max_binaries}"
        )));
    }
    let integral = problem.vars.integral_indices();
    let mut domains = Vec::with_capacity(integral.len());
    let mut combos = 1f64;
    for &k in &integral {
        let v = problem.vars.get(k);
        let lo = v.lower.to_f64_lossy().ceil() as i64;
        let hi = v.upper.to_f64_lossy().floor() as i64;
        if lo > hi {
            return Ok(infeasible(start, 0));
        }
        combos *= (hi - lo + 1) as f64;
        domains.push((lo, hi));
    }
    if combos > 2f64.powi(max_binaries as i32) {
        return Err(Error::Refused(format!("{combos} integral assignments exceed the enumeration limit")));
    }

    let n = problem.n_vars();
    let mut position = vec![usize::MAX; n];
    for (pos, &k) in integral.iter().enumerate() {
        position[k] = pos;
    }
    // Rows over integral variables only, keyed by the last position they need.
    let mut checks: Vec<Vec<usize>> = vec![Vec::new(); integral.len()];
    let mut constant_rows = Vec::new();
    for (r, row) in problem.rows.iter().enumerate() {
        if row.coeffs.iter().all(|&(k, _)| position[k] != usize::MAX) {
            match row.coeffs.iter().map(|&(k, _)| position[k]).max() {
                Some(last) => checks[last].push(r),
                None => constant_rows.push(r),
            }
        }
    }
    let values: Vec<f64> = vec![0.0; n];
    let rows: Vec<(Vec<(usize, f64)>, Sense, f64)> = problem
        .rows
        .iter()
        .map(|r| {
            (
                r.coeffs.iter().map(|&(k, a)| (k, a.to_f64_lossy())).collect(),
                r.sense,
                r.rhs.to_f64_lossy(),
            )
        })
        .collect();
    for &r in &constant_rows {
        let (_, sense, rhs) = &rows[r];
        if sense.violation(0.0, *rhs) > ROW_TOL {
            return Ok(infeasible(start, 0));
        }
    }

    let mut walk = Walk {
        problem,
        rows: &rows,
        integral: &integral,
        domains: &domains,
        checks: &checks,
        values,
        best: None,
        solved: 0,
    };
    walk.descend(0)?;

    Ok(match walk.best {
        Some((obj, x)) => {
            let objective = T::lit(obj);
            SolveResult {
                status: SolveStatus::Optimal,
                incumbent: Some(x.iter().map(|&v| T::lit(v)).collect()),
                objective: Some(objective),
                bound: objective,
                nodes: walk.solved,
                wall_time: start.elapsed(),
            }
        }
        None => infeasible(start, walk.solved),
    })
}

fn infeasible<T: Scalar>(start: Instant, nodes: u64) -> SolveResult<T> {
    SolveResult {
        status: SolveStatus::Infeasible,
        incumbent: None,
        objective: None,
        bound: T::infinity(),
        nodes,
        wall_time: start.elapsed(),
    }
}

type RowData = (Vec<(usize, f64)>, Sense, f64);

struct Walk<'a, T> {
    problem: &'a MiqpProblem<T>,
    rows: &'a [RowData],
    integral: &'a [usize],
    domains: &'a [(i64, i64)],
    checks: &'a [Vec<usize>],
    values: Vec<f64>,
    best: Option<(f64, Vec<f64>)>,
    solved: u64,
}

impl<T: Scalar> Walk<'_, T> {
    fn descend(&mut self, pos: usize) -> Result<()> {
        if pos == self.integral.len() {
            return self.leaf();
        }
        let k = self.integral[pos];
        let (lo, hi) = self.domains[pos];
        for v in lo..=hi {
            self.values[k] = v as f64;
            let ok = self.checks[pos].iter().all(|&r| {
                let (coeffs, sense, rhs) = &self.rows[r];
                let act: f64 = coeffs.iter().map(|&(j, a)| a * self.values[j]).sum();
                sense.violation(act, *rhs) <= ROW_TOL * (1.0 + rhs.abs())
            });
            if ok {
                self.descend(pos + 1)?;
            }
        }
        Ok(())
    }

    /// Continuous restriction at the current integral assignment.
    fn leaf(&mut self) -> Result<()> {
        let problem = self.problem;
        let n = problem.n_vars();
        let obj = &problem.objective;
        let mut col = vec![usize::MAX; n];
        let mut free = Vec::new();
        let mut x = self.values.clone();
        for (k, var) in problem.vars.iter().enumerate() {
            if var.kind.is_integral() {
                continue;
            }
            let (lo, hi) = (var.lower.to_f64_lossy(), var.upper.to_f64_lossy());
            if hi > lo {
                col[k] = free.len();
                free.push(k);
            } else {
                x[k] = lo;
            }
        }
        let shift: Vec<f64> = free
            .iter()
            .map(|&k| {
                let q = obj.quadratic[k].to_f64_lossy();
                if q > 0.0 {
                    -obj.linear[k].to_f64_lossy() / (2.0 * q)
                } else {
                    0.0
                }
            })
            .collect();
        let nf = free.len();
        let mut qp = DenseQp {
            g: free
                .iter()
                .map(|&k| (2.0 * obj.quadratic[k].to_f64_lossy()).max(2.0 * REGULARISATION))
                .collect(),
            c: free
                .iter()
                .zip(&shift)
                .map(|(&k, &d)| 2.0 * obj.quadratic[k].to_f64_lossy() * d + obj.linear[k].to_f64_lossy())
                .collect(),
            eq: Vec::new(),
            ineq: Vec::new(),
        };
        for (coeffs, sense, rhs) in self.rows {
            let mut a = vec![0.0; nf];
            let mut b = *rhs;
            let mut any = false;
            for &(k, v) in coeffs {
                if col[k] == usize::MAX {
                    b -= v * x[k];
                } else {
                    a[col[k]] += v;
                    b -= v * shift[col[k]];
                    any = true;
                }
            }
            if !any {
                if sense.violation(0.0, b) > ROW_TOL * (1.0 + rhs.abs()) {
                    return Ok(());
                }
                continue;
            }
            match sense {
                Sense::Eq => qp.eq.push((a, b)),
                Sense::Ge => qp.ineq.push((a, b)),
                Sense::Le => qp.ineq.push((a.iter().map(|v| -v).collect(), -b)),
            }
        }
        for (c, &k) in free.iter().enumerate() {
            let var = problem.vars.get(k);
            let mut e = vec![0.0; nf];
            e[c] = 1.0;
            qp.ineq.push((e.clone(), var.lower.to_f64_lossy() - shift[c]));
            e[c] = -1.0;
            qp.ineq.push((e, shift[c] - var.upper.to_f64_lossy()));
        }
        self.solved += 1;
        match solve_dense_qp(&qp) {
            DenseQpOutcome::Infeasible => Ok(()),
            DenseQpOutcome::Stalled => Err(Error::Numerical("dense QP made no progress".into())),
            DenseQpOutcome::Optimal { x: y, .. } => {
                for (c, &k) in free.iter().enumerate() {
                    x[k] = y[c] + shift[c];
                }
                let value: f64 = obj
                    .quadratic
                    .iter()
                    .zip(&obj.linear)
                    .zip(&x)
                    .map(|((q, c), v)| q.to_f64_lossy() * v * v + c.to_f64_lossy() * v)
                    .sum::<f64>()
                    + obj.constant.to_f64_lossy();
                if self.best.as_ref().is_none_or(|(b, _)| value < *b) {
                    self.best = Some((value, x));
                }
                Ok(())
            }
        }
    }
}
