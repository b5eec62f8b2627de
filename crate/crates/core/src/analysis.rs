//! Workflows on top of the builders and the solver: collective and
//! separable explanations, the feature-budget sweep, outlier detection.

use rayon::prelude::*;

use crate::domain::{cost_breakdown, changed_features, instance_cost, ChangeSet, CostBreakdown, CostParams, FeasibleSet, InstanceGroup};
use crate::error::{Error, Result};
use crate::formulation::{build_cesep, build_colce_lr, build_collective, extract_solution, MiqpProblem};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::scorers::{LinearModel, Scorer, TreeNode};
use crate::solver::{solve_miqp, SolveResult, SolveStatus, SolverOptions};

/// Score slack accepted when re-checking counterfactuals.
pub const SCORE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub nodes: u64,
    pub wall_time_secs: f64,
    pub bound: Option<f64>,
    pub gap: Option<f64>,
}

impl SolveStats {
    pub fn from_result<T: Scalar>(r: &SolveResult<T>) -> Self {
        let bound = r.bound.to_f64_lossy();
        Self {
            nodes: r.nodes,
            wall_time_secs: r.wall_time.as_secs_f64(),
            bound: bound.is_finite().then_some(bound),
            gap: r.gap().map(|g| g.to_f64_lossy()),
        }
    }

    fn absorb(&mut self, other: &SolveStats) {
        self.nodes += other.nodes;
        self.wall_time_secs += other.wall_time_secs;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectiveExplanation<T> {
    pub status: SolveStatus,
    pub row_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub original: Matrix<T>,
    /// `None` when no feasible point was found.
    pub counterfactual: Option<Matrix<T>>,
    pub selected: Vec<bool>,
    pub changes: Option<ChangeSet>,
    pub objective: Option<CostBreakdown<T>>,
    pub instance_costs: Vec<T>,
    pub cost: CostParams<T>,
    pub i_star: usize,
    pub f_max: Option<usize>,
    pub diagnostics: Vec<String>,
    pub stats: SolveStats,
}

impl<T: Scalar> CollectiveExplanation<T> {
    fn without_solution(group: &InstanceGroup<T>, cost: CostParams<T>, i_star: usize, status: SolveStatus) -> Self {
        Self {
            status,
            row_ids: group.row_ids().to_vec(),
            feature_names: group.feature_names().to_vec(),
            original: group.x0().clone(),
            counterfactual: None,
            selected: vec![false; group.n_instances()],
            changes: None,
            objective: None,
            instance_costs: Vec::new(),
            cost,
            i_star,
            f_max: None,
            diagnostics: Vec::new(),
            stats: SolveStats::default(),
        }
    }

    pub fn has_solution(&self) -> bool {
        self.counterfactual.is_some()
    }

    pub fn n_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    /// Indices of the global changed features (empty without a solution).
    pub fn global_changed(&self) -> Vec<usize> {
        self.changes.as_ref().map(ChangeSet::global_indices).unwrap_or_default()
    }

    pub fn total_cost(&self) -> Option<T> {
        self.objective.as_ref().map(|o| o.total)
    }

    /// `x - x0`, signed so that positive entries mean "increase".
    pub fn deltas(&self) -> Option<Matrix<T>> {
        let x = self.counterfactual.as_ref()?;
        let mut d = x.clone();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                d.set(i, j, x.get(i, j) - self.original.get(i, j));
            }
        }
        Some(d)
    }

    /// Rows that violate the validity contract: selected rows must score at
    /// least `nu - SCORE_TOLERANCE`, unselected rows must stay within `tau`.
    pub fn validity_violations(&self, scorer: &Scorer<T>) -> Vec<String> {
        let Some(x) = &self.counterfactual else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let tol = T::lit(SCORE_TOLERANCE);
        for i in 0..x.nrows() {
            let id = &self.row_ids[i];
            if self.selected[i] {
                let s = scorer.score(x.row(i));
                if s < scorer.nu() - tol {
                    out.push(format!("row {id}: score {s} below threshold {}", scorer.nu()));
                }
            } else {
                let moved = x
                    .row(i)
                    .iter()
                    .zip(self.original.row(i))
                    .map(|(&a, &b)| (a - b).abs())
                    .fold(T::zero(), T::max);
                if moved > self.cost.tau {
                    out.push(format!("row {id}: unselected but moved by {moved}"));
                }
            }
        }
        out
    }
}

fn solve_and_extract<T: Scalar>(
    problem: &MiqpProblem<T>,
    group: &InstanceGroup<T>,
    scorer: &Scorer<T>,
    options: &SolverOptions,
) -> Result<CollectiveExplanation<T>> {
    let result = solve_miqp(problem, options)?;
    let mut expl = match result.incumbent {
        Some(_) => extract_solution(problem, &result)?,
        None => {
            let mut e = CollectiveExplanation::without_solution(
                group,
                problem.meta.cost,
                problem.meta.i_star,
                result.status,
            );
            e.f_max = problem.meta.f_max;
            e.stats = SolveStats::from_result(&result);
            if result.status == SolveStatus::Infeasible {
                e.diagnostics
                    .push("no counterfactual set satisfies the feasible set and the threshold".into());
            }
            e
        }
    };
    expl.diagnostics.extend(expl.validity_violations(scorer));
    Ok(expl)
}

/// Solves the collective problem for either scorer kind.
pub fn explain_collective<T: Scalar>(
    group: &InstanceGroup<T>,
    scorer: &Scorer<T>,
    fs: &FeasibleSet<T>,
    cost: &CostParams<T>,
    i_star: usize,
    options: &SolverOptions,
) -> Result<CollectiveExplanation<T>> {
    let problem = build_collective(group, scorer, fs, cost, i_star, None)?;
    solve_and_extract(&problem, group, scorer, options)
}

/// Linear-model collective problem under the hard budget `sum xi* <= f_max`
/// with a purely quadratic objective.
pub fn explain_with_budget<T: Scalar>(
    group: &InstanceGroup<T>,
    model: &LinearModel<T>,
    fs: &FeasibleSet<T>,
    tau: T,
    i_star: usize,
    f_max: usize,
    options: &SolverOptions,
) -> Result<CollectiveExplanation<T>> {
    let cost = CostParams::with_tau(T::zero(), T::zero(), tau)?;
    let problem = build_colce_lr(group, model, fs, &cost, i_star, Some(f_max))?;
    solve_and_extract(&problem, group, &Scorer::Linear(model.clone()), options)
}

/// Separable workflow: one single-instance problem per row, then the
/// `i_star` cheapest rows are selected (ties go to the lower row index).
/// Only valid without global sparsity and linking rows.
pub fn explain_separable<T: Scalar>(
    group: &InstanceGroup<T>,
    scorer: &Scorer<T>,
    fs: &FeasibleSet<T>,
    lambda_ind: T,
    i_star: usize,
    options: &SolverOptions,
) -> Result<CollectiveExplanation<T>> {
    if fs.has_linking() {
        return Err(Error::Argument(
            "linking rows couple the instances; the separable workflow does not apply".into(),
        ));
    }
    let n = group.n_instances();
    if i_star > n {
        return Err(Error::Argument(format!("I* = {i_star} exceeds group size {n}")));
    }
    let cost = CostParams::new(lambda_ind, T::zero())?;
    fs.check_group(group)?;

    let singles: Vec<Result<CollectiveExplanation<T>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let problem = build_cesep(group.instance(i), scorer, fs, lambda_ind, scorer.nu())?;
            let single = InstanceGroup::new(
                Matrix::from_rows(&[group.instance(i).to_vec()])?,
                vec![group.row_ids()[i].clone()],
                group.feature_names().to_vec(),
            )?;
            solve_and_extract(&problem, &single, scorer, options)
        })
        .collect();
    let singles = singles.into_iter().collect::<Result<Vec<_>>>()?;

    let mut stats = SolveStats::default();
    let mut order: Vec<(usize, T)> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut limited = None;
    for (i, s) in singles.iter().enumerate() {
        stats.absorb(&s.stats);
        match (s.status, s.total_cost()) {
            (SolveStatus::Optimal, Some(c)) => order.push((i, c)),
            (SolveStatus::Infeasible, _) => {
                diagnostics.push(format!("row {}: no valid counterfactual exists", group.row_ids()[i]))
            }
            (st, _) => {
                limited.get_or_insert(st);
                diagnostics.push(format!("row {}: solve stopped with {}", group.row_ids()[i], st.as_str()));
            }
        }
    }
    // Stable sort keeps the row order among equal costs.
    order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));

    if order.len() < i_star {
        let status = limited.unwrap_or(SolveStatus::Infeasible);
        let mut e = CollectiveExplanation::without_solution(group, cost, i_star, status);
        e.diagnostics = diagnostics;
        e.stats = stats;
        return Ok(e);
    }

    let mut x = group.x0().clone();
    let mut selected = vec![false; n];
    for &(i, _) in order.iter().take(i_star) {
        selected[i] = true;
        let cf = singles[i].counterfactual.as_ref().expect("optimal single has a point");
        x.row_mut(i).copy_from_slice(cf.row(0));
    }
    let changes = changed_features(group.x0(), &x, cost.tau)?;
    let objective = cost_breakdown(group.x0(), &x, &cost)?;
    let instance_costs = (0..n)
        .map(|i| instance_cost(group.instance(i), x.row(i), lambda_ind, cost.tau))
        .collect();
    let mut expl = CollectiveExplanation {
        status: limited.unwrap_or(SolveStatus::Optimal),
        row_ids: group.row_ids().to_vec(),
        feature_names: group.feature_names().to_vec(),
        original: group.x0().clone(),
        counterfactual: Some(x),
        selected,
        changes: Some(changes),
        objective: Some(objective),
        instance_costs,
        cost,
        i_star,
        f_max: None,
        diagnostics,
        stats,
    };
    let bad = expl.validity_violations(scorer);
    expl.diagnostics.extend(bad);
    Ok(expl)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoPoint<T> {
    pub f_max: usize,
    pub status: SolveStatus,
    pub quadratic_cost: Option<T>,
    pub changed_features: Vec<usize>,
    pub explanation: CollectiveExplanation<T>,
}

/// One budgeted solve per `F_max` value. Points are independent.
pub fn pareto_sweep<T: Scalar>(
    group: &InstanceGroup<T>,
    model: &LinearModel<T>,
    fs: &FeasibleSet<T>,
    tau: T,
    i_star: usize,
    f_range: &[usize],
    options: &SolverOptions,
) -> Result<Vec<ParetoPoint<T>>> {
    let j = group.n_features();
    if let Some(&bad) = f_range.iter().find(|&&f| f > j) {
        return Err(Error::Argument(format!("F_max = {bad} exceeds feature count {j}")));
    }
    f_range
        .par_iter()
        .map(|&f| {
            let e = explain_with_budget(group, model, fs, tau, i_star, f, options)?;
            Ok(ParetoPoint {
                f_max: f,
                status: e.status,
                quadratic_cost: e.objective.as_ref().map(|o| o.quadratic),
                changed_features: e.global_changed(),
                explanation: e,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutlierReport<T> {
    pub fraction: T,
    pub i_star: usize,
    pub lambda_glob: T,
    /// Row ids of the unselected instances, in row order.
    pub excluded: Vec<String>,
    pub excluded_rows: Vec<usize>,
    pub explanation: CollectiveExplanation<T>,
}

/// `ceil(fraction * I)`, with a small guard so that exact products such as
/// `0.95 * 20` are not pushed up by rounding error.
pub fn outlier_i_star<T: Scalar>(fraction: T, n: usize) -> Result<usize> {
    if !(fraction > T::zero() && fraction <= T::one()) {
        return Err(Error::Argument(format!("fraction {fraction} outside (0, 1]")));
    }
    let raw = fraction.to_f64_lossy() * n as f64;
    Ok(((raw - 1e-9).ceil().max(0.0) as usize).min(n))
}

pub fn detect_outliers<T: Scalar>(
    group: &InstanceGroup<T>,
    scorer: &Scorer<T>,
    fs: &FeasibleSet<T>,
    cost: &CostParams<T>,
    fraction: T,
    options: &SolverOptions,
) -> Result<OutlierReport<T>> {
    let i_star = outlier_i_star(fraction, group.n_instances())?;
    let explanation = explain_collective(group, scorer, fs, cost, i_star, options)?;
    let excluded_rows: Vec<usize> = if explanation.has_solution() {
        (0..group.n_instances()).filter(|&i| !explanation.selected[i]).collect()
    } else {
        Vec::new()
    };
    Ok(OutlierReport {
        fraction,
        i_star,
        lambda_glob: cost.lambda_glob,
        excluded: excluded_rows.iter().map(|&i| group.row_ids()[i].clone()).collect(),
        excluded_rows,
        explanation,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSummary<T> {
    /// Per feature: number of instances whose value changed.
    pub change_counts: Vec<usize>,
    pub global_changed: Vec<usize>,
    pub deltas: Matrix<T>,
}

pub fn perturbation_summary<T: Scalar>(expl: &CollectiveExplanation<T>) -> Result<PerturbationSummary<T>> {
    if expl.status != SolveStatus::Optimal {
        return Err(Error::NoSolution(expl.status));
    }
    let (Some(changes), Some(deltas)) = (expl.changes.as_ref(), expl.deltas()) else {
        return Err(Error::NoSolution(expl.status));
    };
    let m = &changes.per_instance;
    let change_counts = (0..m.ncols()).map(|j| m.column(j).filter(|&c| c).count()).collect();
    Ok(PerturbationSummary {
        change_counts,
        global_changed: changes.global_indices(),
        deltas,
    })
}

/// Result of re-scoring a counterfactual matrix outside the optimizer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub checked: usize,
    /// `(row id, score)` of rows scoring below `nu - SCORE_TOLERANCE`.
    pub violations: Vec<(String, f64)>,
    /// Valid rows that sit within the split margin of a threshold on their
    /// decision path: `(row id, tree, feature, threshold)`.
    pub fragile: Vec<(String, usize, usize, f64)>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn fragile_splits<T: Scalar>(node: &TreeNode<T>, x: &[T], eps: T, out: &mut Vec<(usize, T)>) {
    if let TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    } = node
    {
        let v = x[*feature];
        if v <= *threshold {
            if v > *threshold - eps {
                out.push((*feature, *threshold));
            }
            fragile_splits(left, x, eps, out);
        } else {
            if v < *threshold + eps {
                out.push((*feature, *threshold));
            }
            fragile_splits(right, x, eps, out);
        }
    }
}

/// Re-scores the rows of `x`. When `only` is given, rows whose id is not in
/// it are skipped (unselected rows need not be positive).
pub fn validate_counterfactuals<T: Scalar>(
    ids: &[String],
    x: &Matrix<T>,
    scorer: &Scorer<T>,
    only: Option<&[String]>,
) -> Result<ValidationReport> {
    if ids.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} ids for {} rows", ids.len(), x.nrows())));
    }
    scorer.check_features(x.ncols())?;
    let tol = T::lit(SCORE_TOLERANCE);
    let mut report = ValidationReport::default();
    for (i, id) in ids.iter().enumerate() {
        if only.is_some_and(|keep| !keep.contains(id)) {
            continue;
        }
        report.checked += 1;
        let row = x.row(i);
        let s = scorer.score(row);
        if s < scorer.nu() - tol {
            report.violations.push((id.clone(), s.to_f64_lossy()));
            continue;
        }
        if let Scorer::Ensemble(e) = scorer {
            for (t, tree) in e.trees.iter().enumerate() {
                let mut hits = Vec::new();
                fragile_splits(&tree.root, row, e.epsilon, &mut hits);
                for (f, c) in hits {
                    report.fragile.push((id.clone(), t, f, c.to_f64_lossy()));
                }
            }
        }
    }
    Ok(report)
}
