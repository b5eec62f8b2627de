//! Exact solving of [`MiqpProblem`]s: best-first branch-and-bound with a
//! convex QP relaxation per node, plus a brute-force enumeration oracle.

mod decompose;
mod dense_qp;
mod oracle;
mod relax;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::MiqpProblem;
use crate::scalar::Scalar;

pub use dense_qp::{solve_dense_qp, DenseQp, DenseQpOutcome};
pub use oracle::{brute_force_oracle, DEFAULT_MAX_BINARIES};
pub use relax::Relaxation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    TimeLimit,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::NodeLimit => "node_limit",
            SolveStatus::TimeLimit => "time_limit",
        }
    }

    pub fn is_limit(self) -> bool {
        matches!(self, SolveStatus::NodeLimit | SolveStatus::TimeLimit)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchingRule {
    /// Most fractional integral variable, ties to the lowest index.
    MostFractional,
    /// Like `MostFractional`, but leaf indicators are branched first, then
    /// global change flags, selection flags and change flags.
    #[default]
    PriorityMostFractional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub int_tol: f64,
    pub gap_tol: f64,
    /// Feasibility and optimality tolerance of node relaxations.
    pub kkt_tol: f64,
    pub node_limit: Option<u64>,
    pub time_limit_secs: Option<f64>,
    pub branching: BranchingRule,
    /// The search itself is deterministic; the seed is carried into reports
    /// so runs can be reproduced exactly.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            int_tol: 1e-6,
            gap_tol: 1e-6,
            kkt_tol: 1e-8,
            node_limit: None,
            time_limit_secs: None,
            branching: BranchingRule::default(),
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("int_tol", self.int_tol),
            ("gap_tol", self.gap_tol),
            ("kkt_tol", self.kkt_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.node_limit == Some(0) {
            return Err(Error::Config("node_limit must be positive".into()));
        }
        if let Some(t) = self.time_limit_secs {
            if !(t > 0.0) {
                return Err(Error::Config(format!("time_limit_secs must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult<T> {
    pub status: SolveStatus,
    pub incumbent: Option<Vec<T>>,
    pub objective: Option<T>,
    /// Best proven lower bound (`+inf` for infeasible problems).
    pub bound: T,
    pub nodes: u64,
    pub wall_time: Duration,
}

impl<T: Scalar> SolveResult<T> {
    /// Relative gap `(objective - bound) / max(1, |objective|)`.
    pub fn gap(&self) -> Option<T> {
        self.objective
            .map(|o| ((o - self.bound) / T::one().max(o.abs())).max(T::zero()))
    }
}

/// Relaxation of `problem` with some integral variables fixed.
pub fn solve_relaxation<T: Scalar>(
    problem: &MiqpProblem<T>,
    fixings: &[(usize, T)],
    options: &SolverOptions,
) -> Result<Relaxation<T>> {
    let (mut lo, mut hi) = (problem.vars.lower_bounds(), problem.vars.upper_bounds());
    for &(k, v) in fixings {
        if k >= lo.len() {
            return Err(Error::Argument(format!("fixing references variable {k}")));
        }
        let var = problem.vars.get(k);
        if v < var.lower || v > var.upper {
            return Err(Error::Argument(format!("fixing {} = {v} outside its domain", var.tag)));
        }
        lo[k] = v;
        hi[k] = v;
    }
    relax::relax_boxes(problem, &mut lo, &mut hi, T::lit(options.kkt_tol))
}

struct Node<T> {
    id: u64,
    depth: usize,
    bound: T,
    lo: Vec<T>,
    hi: Vec<T>,
    point: Vec<T>,
}

impl<T: Scalar> PartialEq for Node<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Node<T> {}

impl<T: Scalar> PartialOrd for Node<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Node<T> {
    // Max-heap order: the smallest bound (then the oldest node) is greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .to_f64_lossy()
            .total_cmp(&self.bound.to_f64_lossy())
            .then(other.id.cmp(&self.id))
    }
}

enum Parts {
    /// Every component was solved; the node needs no branching.
    Closed,
    Limit(SolveStatus),
    /// The combined point failed the feasibility check.
    Inconsistent,
}

struct Search<'a, T> {
    problem: &'a MiqpProblem<T>,
    options: &'a SolverOptions,
    integral: Vec<usize>,
    priority: Vec<u8>,
    incumbent: Option<(T, Vec<T>)>,
    tried_roundings: HashSet<Vec<i64>>,
    nodes: u64,
}

/// Branch-and-bound: depth-first until a first incumbent is found, then
/// best-first on the node bound. Deterministic for fixed inputs.
pub fn solve_miqp<T: Scalar>(problem: &MiqpProblem<T>, options: &SolverOptions) -> Result<SolveResult<T>> {
    options.validate()?;
    problem.validate()?;
    let start = Instant::now();
    let integral = problem.vars.integral_indices();
    let priority = integral
        .iter()
        .map(|&k| match options.branching {
            BranchingRule::MostFractional => 0,
            BranchingRule::PriorityMostFractional => problem.vars.get(k).tag.branch_priority(),
        })
        .collect();
    let mut search = Search {
        problem,
        options,
        integral,
        priority,
        incumbent: None,
        tried_roundings: HashSet::new(),
        nodes: 0,
    };
    let deadline = options.time_limit_secs.map(|s| start + Duration::from_secs_f64(s));

    let mut lo = problem.vars.lower_bounds();
    let mut hi = problem.vars.upper_bounds();
    let root = search.evaluate(&mut lo, &mut hi)?;
    // Depth-first until a first incumbent exists, best-first afterwards.
    let mut dive: Vec<Node<T>> = Vec::new();
    let mut open = BinaryHeap::new();
    if root.feasible {
        search.consider(&root.point, &lo, &hi)?;
        dive.push(Node {
            id: 0,
            depth: 0,
            bound: root.bound,
            lo,
            hi,
            point: root.point,
        });
    }
    let mut next_id = 1u64;
    let mut limit = None;

    loop {
        if search.incumbent.is_some() && !dive.is_empty() {
            open.extend(dive.drain(..));
        }
        let Some(node) = dive.pop().or_else(|| open.pop()) else {
            break;
        };
        if search.prunable(node.bound) {
            open.push(node);
            break;
        }
        if options.node_limit.is_some_and(|l| search.nodes >= l) {
            limit = Some(SolveStatus::NodeLimit);
            open.push(node);
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            limit = Some(SolveStatus::TimeLimit);
            open.push(node);
            break;
        }
        if let Some(parts) = decompose::components(problem, &node.lo, &node.hi) {
            match search.solve_parts(&node, &parts, deadline)? {
                Parts::Closed => continue,
                Parts::Limit(l) => {
                    limit = Some(l);
                    open.push(node);
                    break;
                }
                Parts::Inconsistent => {}
            }
        }
        let Some(k) = search.branch_variable(&node.point, &node.lo, &node.hi) else {
            // Integral relaxation: `consider` already captured it.
            continue;
        };
        let v = node.point[k];
        let (down_hi, up_lo, toward_up) = if search.fractionality(v) > T::lit(options.int_tol) {
            (v.floor(), v.ceil(), v - v.floor() >= T::lit(0.5))
        } else {
            let r = v.round();
            if r < node.hi[k] {
                (r, r + T::one(), false)
            } else {
                (r - T::one(), r, true)
            }
        };
        log::trace!(
            "node depth={} bound={:e} incumbent={} branch={} value={:e}",
            node.depth,
            node.bound,
            search
                .incumbent
                .as_ref()
                .map_or("none".to_string(), |(o, _)| format!("{o:e}")),
            problem.vars.get(k).tag,
            v
        );
        // The child on the rounding side is pushed last so a dive takes it.
        for up in [!toward_up, toward_up] {
            let (mut lo, mut hi) = (node.lo.clone(), node.hi.clone());
            if up {
                lo[k] = up_lo;
            } else {
                hi[k] = down_hi;
            }
            if lo[k] > hi[k] {
                continue;
            }
            let child = search.evaluate(&mut lo, &mut hi)?;
            if !child.feasible {
                continue;
            }
            let bound = child.bound.max(node.bound);
            search.consider(&child.point, &lo, &hi)?;
            if search.prunable(bound) {
                continue;
            }
            let child = Node {
                id: next_id,
                depth: node.depth + 1,
                bound,
                lo,
                hi,
                point: child.point,
            };
            next_id += 1;
            if search.incumbent.is_some() {
                open.push(child);
            } else {
                dive.push(child);
            }
        }
    }

    let open_bound = open
        .iter()
        .chain(&dive)
        .map(|n| n.bound)
        .fold(None, |m: Option<T>, b| Some(m.map_or(b, |m| m.min(b))));
    let (status, bound) = match (&search.incumbent, limit) {
        (_, Some(l)) => (l, open_bound.unwrap_or(T::infinity())),
        (Some((obj, _)), None) => (SolveStatus::Optimal, open_bound.map_or(*obj, |b| b.min(*obj))),
        (None, None) => (SolveStatus::Infeasible, T::infinity()),
    };
    let bound = match &search.incumbent {
        Some((obj, _)) => bound.min(*obj),
        None => bound,
    };
    let (objective, incumbent) = match search.incumbent {
        Some((o, x)) => (Some(o), Some(x)),
        None => (None, None),
    };
    Ok(SolveResult {
        status,
        incumbent,
        objective,
        bound,
        nodes: search.nodes,
        wall_time: start.elapsed(),
    })
}

impl<T: Scalar> Search<'_, T> {
    fn evaluate(&mut self, lo: &mut [T], hi: &mut [T]) -> Result<Relaxation<T>> {
        self.nodes += 1;
        relax::relax_boxes(self.problem, lo, hi, T::lit(self.options.kkt_tol))
    }

    fn gap_slack(&self, obj: T) -> T {
        T::lit(self.options.gap_tol) * T::one().max(obj.abs())
    }

    fn prunable(&self, bound: T) -> bool {
        match &self.incumbent {
            Some((obj, _)) => bound >= *obj - self.gap_slack(*obj),
            None => false,
        }
    }

    fn fractionality(&self, v: T) -> T {
        let f = v - v.floor();
        f.min(T::one() - f)
    }

    /// Most fractional variable of the lowest class. While some variable is
    /// fractional, unfixed class-0 variables are branched on even at
    /// integral values: fixing them lets the node decompose.
    fn branch_variable(&self, point: &[T], lo: &[T], hi: &[T]) -> Option<usize> {
        let tol = T::lit(self.options.int_tol);
        let tie = T::lit(1e-9);
        let mut best: Option<(u8, T, usize)> = None;
        let mut unfixed_top = None;
        for (pos, &k) in self.integral.iter().enumerate() {
            let frac = self.fractionality(point[k]);
            if frac <= tol {
                if self.priority[pos] == 0 && lo[k] < hi[k] && unfixed_top.is_none() {
                    unfixed_top = Some(k);
                }
                continue;
            }
            let class = self.priority[pos];
            let better = match best {
                None => true,
                Some((bc, bf, _)) => class < bc || (class == bc && frac > bf + tie),
            };
            if better {
                best = Some((class, frac, k));
            }
        }
        match (best, unfixed_top) {
            (Some((c, _, _)), Some(k)) if c > 0 && self.options.branching == BranchingRule::PriorityMostFractional => {
                Some(k)
            }
            (b, _) => b.map(|(_, _, k)| k),
        }
    }

    /// Solves each connected component of the free variables on its own and
    /// combines the optima into the exact value of the node.
    fn solve_parts(&mut self, node: &Node<T>, parts: &[Vec<usize>], deadline: Option<Instant>) -> Result<Parts> {
        let half = T::lit(0.5);
        let mut x: Vec<T> = node.lo.iter().zip(&node.hi).map(|(&l, &h)| (l + h) * half).collect();
        for part in parts {
            let sub = decompose::subproblem(self.problem, &node.lo, &node.hi, part);
            let mut opts = self.options.clone();
            opts.node_limit = self.options.node_limit.map(|l| l.saturating_sub(self.nodes).max(1));
            if let Some(d) = deadline {
                opts.time_limit_secs = Some(d.saturating_duration_since(Instant::now()).as_secs_f64().max(1e-3));
            }
            let r = solve_miqp(&sub, &opts)?;
            self.nodes += r.nodes;
            match r.status {
                SolveStatus::Optimal => {}
                SolveStatus::Infeasible => return Ok(Parts::Closed),
                limit => return Ok(Parts::Limit(limit)),
            }
            let point = r.incumbent.expect("optimal result carries a point");
            for (&k, v) in part.iter().zip(point) {
                x[k] = v;
            }
        }
        if self.problem.max_violation(&x) > T::lit(1e-6) {
            log::debug!("decomposed point violates a row; branching instead");
            return Ok(Parts::Inconsistent);
        }
        let obj = self.problem.objective_value(&x);
        if self.incumbent.as_ref().is_none_or(|(o, _)| obj < *o) {
            log::trace!("incumbent {obj:e} from {} components", parts.len());
            self.incumbent = Some((obj, x));
        }
        Ok(Parts::Closed)
    }

    /// Rounds integral variables of a relaxation point (at 0.5, and the
    /// all-fractional-up variant), re-solves the continuous part and keeps
    /// the result when it improves the incumbent.
    fn consider(&mut self, point: &[T], lo: &[T], hi: &[T]) -> Result<()> {
        let tol = T::lit(self.options.int_tol);
        // `round` sends exact halves up.
        let near: Vec<T> = self.integral.iter().map(|&k| point[k].round()).collect();
        let up: Vec<T> = self
            .integral
            .iter()
            .map(|&k| {
                if self.fractionality(point[k]) > tol {
                    point[k].ceil()
                } else {
                    point[k].round()
                }
            })
            .collect();
        for pattern in [near, up] {
            let key: Vec<i64> = pattern.iter().map(|v| v.to_f64_lossy() as i64).collect();
            if !self.tried_roundings.insert(key) {
                continue;
            }
            let (mut l, mut h) = (lo.to_vec(), hi.to_vec());
            let mut inside = true;
            for (&k, &v) in self.integral.iter().zip(&pattern) {
                if v < l[k] || v > h[k] {
                    inside = false;
                    break;
                }
                l[k] = v;
                h[k] = v;
            }
            if !inside {
                continue;
            }
            let fixed = relax::relax_boxes(self.problem, &mut l, &mut h, T::lit(self.options.kkt_tol))?;
            if !fixed.feasible {
                continue;
            }
            let mut x = fixed.point;
            for (&k, &v) in self.integral.iter().zip(&pattern) {
                x[k] = v;
            }
            if self.problem.max_violation(&x) > T::lit(1e-6) {
                continue;
            }
            let obj = self.problem.objective_value(&x);
            let improves = self.incumbent.as_ref().is_none_or(|(o, _)| obj < *o);
            if improves {
                log::trace!("incumbent {obj:e}");
                self.incumbent = Some((obj, x));
            }
        }
        Ok(())
    }
}
