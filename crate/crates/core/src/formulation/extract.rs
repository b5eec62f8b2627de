use crate::analysis::{CollectiveExplanation, SolveStats};
use crate::domain::{changed_features, cost_breakdown, instance_cost};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::solver::SolveResult;

use super::{MiqpProblem, VarTag};

/// Decodes a solver assignment. Coordinates whose change flag is off are
/// set exactly to `x0` (the model forces equality there), integral
/// coordinates are rounded, and every coordinate is clamped into its box.
/// Change sets and costs are recomputed from the decoded matrix rather than
/// read from the binaries.
pub fn extract_solution<T: Scalar>(
    problem: &MiqpProblem<T>,
    result: &SolveResult<T>,
) -> Result<CollectiveExplanation<T>> {
    let Some(v) = result.incumbent.as_ref() else {
        return Err(Error::NoSolution(result.status));
    };
    if v.len() != problem.n_vars() {
        return Err(Error::Dimension(format!(
            "assignment has {} values for {} variables",
            v.len(),
            problem.n_vars()
        )));
    }
    let meta = &problem.meta;
    let (n, jn) = (meta.n_instances(), meta.n_features());
    let half = T::lit(0.5);
    let mut x = Matrix::filled(n, jn, T::zero());
    for i in 0..n {
        for j in 0..jn {
            let k = problem
                .vars
                .index_of(VarTag::X { instance: i, feature: j })
                .ok_or_else(|| Error::Argument(format!("x_{i}_{j} missing")))?;
            let var = problem.vars.get(k);
            let flag = problem.value_of(v, VarTag::Change { instance: i, feature: j });
            let mut value = if var.lower == var.upper {
                var.lower
            } else if flag.is_some_and(|f| f < half) {
                meta.x0.get(i, j)
            } else {
                v[k]
            };
            if var.kind.is_integral() {
                value = value.round();
            }
            x.set(i, j, value.max(var.lower).min(var.upper));
        }
    }
    let selected: Vec<bool> = (0..n)
        .map(|i| problem.value_of(v, VarTag::Select { instance: i }).is_some_and(|y| y >= half))
        .collect();

    let changes = changed_features(&meta.x0, &x, meta.cost.tau)?;
    let objective = cost_breakdown(&meta.x0, &x, &meta.cost)?;
    let instance_costs = (0..n)
        .map(|i| instance_cost(meta.x0.row(i), x.row(i), meta.cost.lambda_ind, meta.cost.tau))
        .collect();

    let mut diagnostics = Vec::new();
    let model_value = problem.objective_value(v);
    let recomputed = if meta.f_max.is_some() {
        objective.quadratic + objective.individual_l0
    } else {
        objective.total
    };
    if (model_value - recomputed).abs() > T::lit(1e-6) * T::one().max(recomputed.abs()) {
        diagnostics.push(format!(
            "model objective {model_value} differs from recomputed cost {recomputed}"
        ));
    }

    Ok(CollectiveExplanation {
        status: result.status,
        row_ids: meta.row_ids.clone(),
        feature_names: meta.feature_names.clone(),
        original: meta.x0.clone(),
        counterfactual: Some(x),
        selected,
        changes: Some(changes),
        objective: Some(objective),
        instance_costs,
        cost: meta.cost,
        i_star: meta.i_star,
        f_max: meta.f_max,
        diagnostics,
        stats: SolveStats::from_result(result),
    })
}
