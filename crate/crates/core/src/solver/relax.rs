//! Continuous relaxation of a node: bound propagation, substitution of
//! fixed variables, and an interior-point solve of the remaining convex QP.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use crate::domain::Sense;
use crate::error::{Error, Result};
use crate::formulation::MiqpProblem;
use crate::scalar::Scalar;

/// Boxes closer than this are treated as a fixed value.
pub(crate) const FIX_WIDTH: f64 = 1e-9;
const PROPAGATION_PASSES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Relaxation<T> {
    pub feasible: bool,
    /// Objective of the relaxed optimum (including the constant term).
    pub value: T,
    /// Valid lower bound on the relaxation (never above `value`).
    pub bound: T,
    /// Full-length point; empty when infeasible.
    pub point: Vec<T>,
}

impl<T: Scalar> Relaxation<T> {
    pub(crate) fn infeasible() -> Self {
        Self {
            feasible: false,
            value: T::infinity(),
            bound: T::infinity(),
            point: Vec::new(),
        }
    }
}

/// Tightens `lo`/`hi` with row activities. Integral variables get rounded
/// bounds. Returns `false` when some row or box is provably empty.
pub(crate) fn propagate<T: Scalar>(problem: &MiqpProblem<T>, lo: &mut [T], hi: &mut [T], tol: T) -> bool {
    let integral: Vec<bool> = problem.vars.iter().map(|v| v.kind.is_integral()).collect();
    let int_tol = T::lit(1e-6);
    for k in 0..lo.len() {
        if integral[k] {
            lo[k] = (lo[k] - int_tol).ceil();
            hi[k] = (hi[k] + int_tol).floor();
        }
        if lo[k] > hi[k] + tol {
            return false;
        }
    }
    for _ in 0..PROPAGATION_PASSES {
        let mut changed = false;
        for row in &problem.rows {
            let (mut min_act, mut max_act) = (T::zero(), T::zero());
            for &(k, a) in &row.coeffs {
                let (p, q) = (a * lo[k], a * hi[k]);
                min_act += p.min(q);
                max_act += p.max(q);
            }
            let slack = tol * (T::one() + row.rhs.abs());
            let need_upper = matches!(row.sense, Sense::Le | Sense::Eq);
            let need_lower = matches!(row.sense, Sense::Ge | Sense::Eq);
            if (need_upper && min_act > row.rhs + slack) || (need_lower && max_act < row.rhs - slack) {
                return false;
            }
            for &(k, a) in &row.coeffs {
                if a == T::zero() {
                    continue;
                }
                let (p, q) = (a * lo[k], a * hi[k]);
                let (own_min, own_max) = (p.min(q), p.max(q));
                let mut new_lo = lo[k];
                let mut new_hi = hi[k];
                if need_upper {
                    // a x_k <= rhs - (min_act - own_min)
                    let cap = (row.rhs - (min_act - own_min)) / a;
                    if a > T::zero() {
                        new_hi = new_hi.min(cap);
                    } else {
                        new_lo = new_lo.max(cap);
                    }
                }
                if need_lower {
                    let floor = (row.rhs - (max_act - own_max)) / a;
                    if a > T::zero() {
                        new_lo = new_lo.max(floor);
                    } else {
                        new_hi = new_hi.min(floor);
                    }
                }
                if integral[k] {
                    new_lo = (new_lo - int_tol).ceil();
                    new_hi = (new_hi + int_tol).floor();
                }
                if !new_lo.is_finite() || !new_hi.is_finite() {
                    continue;
                }
                let step = T::lit(1e-7) * (T::one() + lo[k].abs().max(hi[k].abs()));
                if new_lo > lo[k] + step {
                    lo[k] = new_lo;
                    changed = true;
                }
                if new_hi < hi[k] - step {
                    hi[k] = new_hi;
                    changed = true;
                }
                if lo[k] > hi[k] {
                    if lo[k] > hi[k] + tol * (T::one() + lo[k].abs()) {
                        return false;
                    }
                    let mid = (lo[k] + hi[k]) * T::lit(0.5);
                    lo[k] = mid;
                    hi[k] = mid;
                }
            }
        }
        if !changed {
            break;
        }
    }
    true
}

/// Minimizes the objective over rows and the boxes `[lo, hi]` (integrality
/// dropped). `lo`/`hi` are propagated in place.
pub(crate) fn relax_boxes<T: Scalar>(
    problem: &MiqpProblem<T>,
    lo: &mut [T],
    hi: &mut [T],
    kkt_tol: T,
) -> Result<Relaxation<T>> {
    let feas_tol = T::lit(1e-9).max(kkt_tol);
    if !propagate(problem, lo, hi, feas_tol) {
        return Ok(Relaxation::infeasible());
    }
    let n = problem.n_vars();
    let fix_width = T::lit(FIX_WIDTH);
    let obj = &problem.objective;

    // Column map of free variables and the centring shift.
    let mut col = vec![usize::MAX; n];
    let mut free = Vec::new();
    let mut point = vec![T::zero(); n];
    for k in 0..n {
        if hi[k] - lo[k] > fix_width {
            col[k] = free.len();
            free.push(k);
        } else {
            point[k] = (lo[k] + hi[k]) * T::lit(0.5);
        }
    }
    let two = T::lit(2.0);
    let shift: Vec<T> = free
        .iter()
        .map(|&k| {
            let q = obj.quadratic[k];
            if q > T::zero() {
                -obj.linear[k] / (two * q)
            } else {
                T::zero()
            }
        })
        .collect();
    let base = {
        let mut v = point.clone();
        for (c, &k) in free.iter().enumerate() {
            v[k] = shift[c];
        }
        v
    };

    let mut eq = Triplets::default();
    let mut ineq = Triplets::default();
    for row in &problem.rows {
        let mut rhs = row.rhs;
        let mut coeffs = Vec::new();
        let (mut min_act, mut max_act) = (T::zero(), T::zero());
        for &(k, a) in &row.coeffs {
            if col[k] == usize::MAX {
                rhs -= a * point[k];
            } else {
                rhs -= a * base[k];
                coeffs.push((col[k], a));
                let (p, q) = (a * (lo[k] - base[k]), a * (hi[k] - base[k]));
                min_act += p.min(q);
                max_act += p.max(q);
            }
        }
        let slack = feas_tol * (T::one() + row.rhs.abs());
        if coeffs.is_empty() {
            if row.sense.violation(T::zero(), rhs) > slack {
                return Ok(Relaxation::infeasible());
            }
            continue;
        }
        match row.sense {
            Sense::Eq => eq.push_row(&coeffs, T::one(), rhs),
            Sense::Le if max_act > rhs => ineq.push_row(&coeffs, T::one(), rhs),
            Sense::Ge if min_act < rhs => ineq.push_row(&coeffs, -T::one(), -rhs),
            _ => {}
        }
    }

    if free.is_empty() {
        let value = problem.objective_value(&point);
        return Ok(Relaxation {
            feasible: true,
            value,
            bound: value,
            point,
        });
    }

    for (c, &k) in free.iter().enumerate() {
        ineq.push_row(&[(c, T::one())], T::one(), hi[k] - base[k]);
        ineq.push_row(&[(c, T::one())], -T::one(), -(lo[k] - base[k]));
    }

    let nf = free.len();
    let p = CscMatrix::new_from_triplets(
        nf,
        nf,
        (0..nf).collect(),
        (0..nf).collect(),
        free.iter().map(|&k| two * obj.quadratic[k]).collect(),
    );
    let q: Vec<T> = free
        .iter()
        .zip(&shift)
        .map(|(&k, &d)| two * obj.quadratic[k] * d + obj.linear[k])
        .collect();
    let m_eq = eq.rhs.len();
    let m = m_eq + ineq.rhs.len();
    let mut rows_idx = eq.rows;
    rows_idx.extend(ineq.rows.iter().map(|r| r + m_eq));
    let mut cols_idx = eq.cols;
    cols_idx.extend(ineq.cols);
    let mut vals = eq.vals;
    vals.extend(ineq.vals);
    let a = CscMatrix::new_from_triplets(m, nf, rows_idx, cols_idx, vals);
    let mut b = eq.rhs;
    b.extend(ineq.rhs);
    let mut cones = Vec::new();
    if m_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(m_eq));
    }
    cones.push(SupportedConeT::NonnegativeConeT(m - m_eq));

    let solution = interior_point(&p, &q, &a, &b, &cones, kkt_tol)?;
    let Some((x, primal, dual)) = solution else {
        return Ok(Relaxation::infeasible());
    };

    for (c, &k) in free.iter().enumerate() {
        point[k] = (x[c] + shift[c]).max(lo[k]).min(hi[k]);
    }
    let constant: T = (0..n)
        .map(|k| {
            let v = base[k];
            obj.quadratic[k] * v * v + obj.linear[k] * v
        })
        .sum::<T>()
        + obj.constant;
    let value = primal + constant;
    let dual_value = if dual.is_finite() { dual + constant } else { value };
    let bound = value.min(dual_value);
    Ok(Relaxation {
        feasible: true,
        value,
        bound,
        point,
    })
}

#[derive(Default)]
struct Triplets<T> {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
    rhs: Vec<T>,
}

impl<T: Scalar> Triplets<T> {
    fn push_row(&mut self, coeffs: &[(usize, T)], sign: T, rhs: T) {
        let r = self.rhs.len();
        for &(c, a) in coeffs {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(sign * a);
        }
        self.rhs.push(rhs);
    }
}

type IpOutcome<T> = Option<(Vec<T>, T, T)>;

/// Solves `min 1/2 x'Px + q'x` over the cones. `None` means infeasible.
fn interior_point<T: Scalar>(
    p: &CscMatrix<T>,
    q: &[T],
    a: &CscMatrix<T>,
    b: &[T],
    cones: &[SupportedConeT<T>],
    kkt_tol: T,
) -> Result<IpOutcome<T>> {
    let mut last = SolverStatus::Unsolved;
    for attempt in 0..2 {
        let mut settings = DefaultSettings::<T>::default();
        settings.verbose = false;
        settings.presolve_enable = false;
        settings.tol_feas = kkt_tol;
        settings.tol_gap_abs = kkt_tol;
        settings.tol_gap_rel = kkt_tol;
        if attempt == 1 {
            // Second try: more iterations, stronger regularisation, looser
            // reduced-accuracy acceptance.
            settings.max_iter = 400;
            settings.static_regularization_constant = T::lit(1e-7);
            settings.equilibrate_max_iter = 50;
            settings.iterative_refinement_max_iter = 30;
        }
        let mut solver = DefaultSolver::new(p, q, a, b, cones, settings)
            .map_err(|e| Error::Numerical(format!("relaxation setup failed: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        last = sol.status;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                return Ok(Some((sol.x.clone(), sol.obj_val, sol.obj_val_dual)));
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => return Ok(None),
            _ => {}
        }
    }
    Err(Error::Numerical(format!("node relaxation ended with status {last:?}")))
}
