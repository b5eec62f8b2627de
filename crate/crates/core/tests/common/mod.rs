#![allow(dead_code)]

use std::path::PathBuf;

use groupcf::domain::{CostParams, FeasibleSet, FeatureSpec, InstanceGroup};
use groupcf::fixtures::{train_forest, train_logistic, TrainConfig};
use groupcf::formulation::{build_collective, MiqpProblem, VarKind, VarTag};
use groupcf::io::{load_dataset, Dataset};
use groupcf::scorers::{leaf_of, LinearModel, Scorer, TreeEnsemble, TreeNode, WeightedTree};
use groupcf::solver::SolverOptions;
use groupcf::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TAU: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

#[derive(Clone, Debug)]
pub struct Case {
    pub group: InstanceGroup<f64>,
    pub scorer: Scorer<f64>,
    pub fs: FeasibleSet<f64>,
    pub cost: CostParams<f64>,
    pub i_star: usize,
    pub f_max: Option<usize>,
}

impl Case {
    pub fn problem(&self) -> MiqpProblem<f64> {
        build_collective(&self.group, &self.scorer, &self.fs, &self.cost, self.i_star, self.f_max).unwrap()
    }

    pub fn linear(&self) -> &LinearModel<f64> {
        match &self.scorer {
            Scorer::Linear(m) => m,
            Scorer::Ensemble(_) => panic!("not a linear case"),
        }
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn random_x0(rng: &mut ChaCha8Rng, n: usize, j: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..j).map(|_| round2(rng.gen_range(-1.0..1.0))).collect())
        .collect()
}

fn random_box(rng: &mut ChaCha8Rng, rows: &[Vec<f64>], j: usize, immutable_p: f64) -> FeasibleSet<f64> {
    let features = (0..j)
        .map(|f| {
            let lo = rows.iter().map(|r| r[f]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[f]).fold(f64::NEG_INFINITY, f64::max);
            let spec = FeatureSpec::continuous(
                format!("f{f}"),
                round2(lo - rng.gen_range(0.3..1.5)),
                round2(hi + rng.gen_range(0.3..1.5)),
            );
            if rng.gen_bool(immutable_p) {
                spec.immutable()
            } else {
                spec
            }
        })
        .collect();
    FeasibleSet::new(features).unwrap()
}

fn random_lambdas(rng: &mut ChaCha8Rng) -> CostParams<f64> {
    const IND: [f64; 4] = [0.0, 0.05, 0.3, 1.0];
    const GLOB: [f64; 4] = [0.0, 0.1, 0.5, 2.0];
    CostParams::new(IND[rng.gen_range(0..4)], GLOB[rng.gen_range(0..4)]).unwrap()
}

fn random_i_star(rng: &mut ChaCha8Rng, n: usize) -> usize {
    if rng.gen_bool(0.6) {
        n
    } else {
        rng.gen_range(0..=n)
    }
}

/// Linear-score group with `I <= max_i`, `J <= max_j`; with `budget` a
/// quarter of the cases use a feature budget instead of the l0 terms.
pub fn random_linear_case(rng: &mut ChaCha8Rng, max_i: usize, max_j: usize, budget: bool) -> Case {
    let n = rng.gen_range(1..=max_i);
    let j = rng.gen_range(1..=max_j);
    let rows = random_x0(rng, n, j);
    let fs = random_box(rng, &rows, j, 0.15);
    let w: Vec<f64> = (0..j).map(|_| round2(rng.gen_range(-1.0..1.0))).collect();
    let b = round2(rng.gen_range(-1.2..0.2));
    let model = LinearModel::new(w, b, 0.0).unwrap();
    let (cost, f_max) = if budget && rng.gen_bool(0.25) {
        (CostParams::zero(), Some(rng.gen_range(0..=j)))
    } else {
        (random_lambdas(rng), None)
    };
    Case {
        group: InstanceGroup::from_rows(&rows).unwrap(),
        scorer: Scorer::Linear(model),
        fs,
        cost,
        i_star: random_i_star(rng, n),
        f_max,
    }
}

fn random_tree(rng: &mut ChaCha8Rng, j: usize, depth: usize) -> TreeNode<f64> {
    if depth == 0 || rng.gen_bool(0.2) {
        return TreeNode::leaf(if rng.gen_bool(0.5) { 1 } else { -1 });
    }
    TreeNode::split(
        rng.gen_range(0..j),
        round2(rng.gen_range(-0.8..0.8)),
        random_tree(rng, j, depth - 1),
        random_tree(rng, j, depth - 1),
    )
}

pub fn random_ensemble(rng: &mut ChaCha8Rng, j: usize, max_trees: usize, max_depth: usize) -> TreeEnsemble<f64> {
    let t = rng.gen_range(1..=max_trees);
    let trees: Vec<WeightedTree<f64>> = (0..t)
        .map(|_| {
            let weight = if rng.gen_bool(0.5) { 1.0 / t as f64 } else { round2(rng.gen_range(0.2..1.0)) };
            let depth = rng.gen_range(1..=max_depth);
            WeightedTree {
                weight,
                root: random_tree(rng, j, depth).with_numbered_leaves(),
            }
        })
        .collect();
    let total: f64 = trees.iter().map(|t| t.weight).sum();
    let nu = total * [0.3, 0.5, 0.9][rng.gen_range(0..3)];
    TreeEnsemble::new(trees, nu, 1e-5).unwrap()
}

/// Ensemble group with `I <= max_i`, `J <= max_j`, `T <= max_t`, `D <= max_d`.
pub fn random_ensemble_case(rng: &mut ChaCha8Rng, max_i: usize, max_j: usize, max_t: usize, max_d: usize) -> Case {
    let n = rng.gen_range(1..=max_i);
    let j = rng.gen_range(1..=max_j);
    let rows = random_x0(rng, n, j);
    let fs = random_box(rng, &rows, j, 0.1);
    Case {
        group: InstanceGroup::from_rows(&rows).unwrap(),
        scorer: Scorer::Ensemble(random_ensemble(rng, j, max_t, max_d)),
        fs,
        cost: random_lambdas(rng),
        i_star: random_i_star(rng, n),
        f_max: None,
    }
}

pub fn binaries(p: &MiqpProblem<f64>) -> usize {
    p.vars.count_kind(VarKind::Binary)
}

pub fn options() -> SolverOptions {
    SolverOptions::default()
}

/// Counterfactual matrix read off a raw assignment.
pub fn decode_x(p: &MiqpProblem<f64>, v: &[f64]) -> Matrix<f64> {
    let (n, j) = (p.meta.n_instances(), p.meta.n_features());
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..j)
                .map(|f| p.value_of(v, VarTag::X { instance: i, feature: f }).unwrap())
                .collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

pub fn selection(p: &MiqpProblem<f64>, v: &[f64]) -> Vec<bool> {
    (0..p.meta.n_instances())
        .map(|i| p.value_of(v, VarTag::Select { instance: i }).is_none_or(|y| y > 0.5))
        .collect()
}

/// Validity re-checked from scratch: selected rows score at least `nu`,
/// the others stay at `x0`, and exactly `i_star` rows are selected.
pub fn validity_problems(
    x0: &Matrix<f64>,
    x: &Matrix<f64>,
    selected: &[bool],
    scorer: &Scorer<f64>,
    i_star: usize,
) -> Vec<String> {
    let mut out = Vec::new();
    if selected.iter().filter(|&&s| s).count() != i_star {
        out.push(format!("{} rows selected, expected {i_star}", selected.iter().filter(|&&s| s).count()));
    }
    for (i, &sel) in selected.iter().enumerate() {
        if sel {
            let s = match scorer {
                Scorer::Linear(m) => m.weights.iter().zip(x.row(i)).map(|(w, v)| w * v).sum::<f64>() + m.intercept,
                Scorer::Ensemble(e) => e
                    .trees
                    .iter()
                    .filter(|t| {
                        let leaf = leaf_of(&t.root, x.row(i));
                        t.root.leaves().iter().any(|&(id, c)| id == leaf && c == 1)
                    })
                    .map(|t| t.weight)
                    .sum(),
            };
            if s < scorer.nu() - 1e-6 {
                out.push(format!("row {i} scores {s} < {}", scorer.nu()));
            }
        } else if x.row(i).iter().zip(x0.row(i)).any(|(a, b)| (a - b).abs() > TAU) {
            out.push(format!("unselected row {i} moved"));
        }
    }
    out
}

/// One-leaf equalities and agreement of the leaf flags with the leaves the
/// decoded counterfactuals actually reach.
pub fn leaf_problems(p: &MiqpProblem<f64>, v: &[f64], ens: &TreeEnsemble<f64>) -> Vec<String> {
    let x = decode_x(p, v);
    let mut out = Vec::new();
    for i in 0..x.nrows() {
        for (t, tree) in ens.trees.iter().enumerate() {
            let leaves = tree.root.leaves();
            let flags: Vec<f64> = leaves
                .iter()
                .map(|&(id, _)| {
                    p.value_of(v, VarTag::Leaf { instance: i, tree: t, leaf: id }).unwrap()
                })
                .collect();
            let sum: f64 = flags.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                out.push(format!("instance {i} tree {t}: leaf flags sum to {sum}"));
                continue;
            }
            let chosen = leaves[flags.iter().position(|&z| z > 0.5).unwrap()].0;
            let reached = leaf_of(&tree.root, x.row(i));
            if chosen != reached {
                out.push(format!("instance {i} tree {t}: flag on leaf {chosen}, point reaches {reached}"));
            }
        }
    }
    out
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn boston() -> Dataset<f64> {
    let d = data_dir();
    load_dataset(&d.join("boston.csv"), &d.join("boston.features.json")).unwrap()
}

pub fn boston_logistic(data: &Dataset<f64>) -> LinearModel<f64> {
    train_logistic(data.group.x0(), data.labels.as_ref().unwrap(), &TrainConfig::logistic(7)).unwrap()
}

pub fn boston_forest(data: &Dataset<f64>) -> TreeEnsemble<f64> {
    train_forest(data.group.x0(), data.labels.as_ref().unwrap(), &TrainConfig::forest(7, 5, 3)).unwrap()
}

/// First `cap` rows that are labelled negative and predicted negative.
pub fn negative_rows(data: &Dataset<f64>, scorer: &Scorer<f64>, cap: usize) -> Dataset<f64> {
    let labels = data.labels.as_ref().unwrap();
    let rows: Vec<usize> = (0..data.group.n_instances())
        .filter(|&i| labels[i] == -1 && scorer.predict(data.group.instance(i)) == -1)
        .take(cap)
        .collect();
    data.select(&rows).unwrap()
}

/// Solves `case` with branch-and-bound and by enumeration and cross-checks
/// objective, verdict, validity, big-M rows and leaf flags. Returns whether
/// the case was feasible.
pub fn oracle_check(case: &Case) -> Result<bool, String> {
    use groupcf::domain::cost_of;
    use groupcf::formulation::{audit_big_m, RowRole};
    use groupcf::solver::{brute_force_oracle, solve_miqp, SolveStatus, DEFAULT_MAX_BINARIES};

    let p = case.problem();
    let bb = solve_miqp(&p, &options()).map_err(|e| format!("oracle: {e}"))?;
    let or = brute_force_oracle(&p, DEFAULT_MAX_BINARIES).map_err(|e| format!("oracle: {e}"))?;
    let audit = audit_big_m(&p, 1e-9);
    if !audit.is_empty() {
        return Err(format!("audit: {} big-M rows stay active when switched off", audit.len()));
    }
    match (bb.status, or.status) {
        (SolveStatus::Infeasible, SolveStatus::Infeasible) => return Ok(false),
        (SolveStatus::Optimal, SolveStatus::Optimal) => {}
        (a, b) => return Err(format!("oracle: verdicts differ: search {a:?}, enumeration {b:?}")),
    }
    let (ob, oo) = (bb.objective.unwrap(), or.objective.unwrap());
    if !rel_close(ob, oo, 1e-6) {
        return Err(format!("oracle: objective {ob} vs enumeration {oo}"));
    }

    // The strengthening rows must not cut off the optimum.
    let mut plain = p.clone();
    plain.rows.retain(|r| r.role != RowRole::Implied);
    let op = brute_force_oracle(&plain, DEFAULT_MAX_BINARIES).map_err(|e| format!("oracle: {e}"))?;
    if op.status != SolveStatus::Optimal || !rel_close(op.objective.unwrap(), oo, 1e-6) {
        return Err(format!("oracle: without implied rows: {:?} {:?} vs {oo}", op.status, op.objective));
    }

    let v = bb.incumbent.as_ref().unwrap();
    let x = decode_x(&p, v);
    let selected = selection(&p, v);
    let bad = validity_problems(case.group.x0(), &x, &selected, &case.scorer, case.i_star);
    if !bad.is_empty() {
        return Err(format!("validity: {}", bad.join("; ")));
    }
    let recomputed = cost_of(case.group.x0(), &x, &case.cost).unwrap();
    if (recomputed - ob).abs() > 1e-5 * 1f64.max(ob.abs()) {
        return Err(format!("oracle: objective {ob} but cost of the decoded point is {recomputed}"));
    }
    if let Some(f) = case.f_max {
        let changed = groupcf::domain::changed_features(case.group.x0(), &x, TAU).unwrap();
        if changed.global_count() > f {
            return Err(format!("oracle: {} features changed under budget {f}", changed.global_count()));
        }
    }
    if let Scorer::Ensemble(e) = &case.scorer {
        let bad = leaf_problems(&p, v, e);
        if !bad.is_empty() {
            return Err(format!("leaves: {}", bad.join("; ")));
        }
    }
    Ok(true)
}

/// Draws a case from `gen` until its problem fits the enumeration limit.
pub fn small_case(rng: &mut ChaCha8Rng, gen: impl Fn(&mut ChaCha8Rng) -> Case) -> Case {
    loop {
        let c = gen(rng);
        if binaries(&c.problem()) <= groupcf::solver::DEFAULT_MAX_BINARIES {
            return c;
        }
    }
}

/// Runs `n_linear` linear and `n_ensemble` ensemble oracle checks; returns
/// the number of feasible cases.
pub fn oracle_suite(seed: u64, n_linear: usize, n_ensemble: usize) -> Result<usize, String> {
    let mut r = rng(seed);
    let mut feasible = 0;
    for k in 0..n_linear + n_ensemble {
        let case = if k < n_linear {
            small_case(&mut r, |r| random_linear_case(r, 3, 4, true))
        } else {
            small_case(&mut r, |r| random_ensemble_case(r, 2, 3, 2, 2))
        };
        if oracle_check(&case).map_err(|e| format!("case {k}: {e}\n{case:?}"))? {
            feasible += 1;
        }
    }
    Ok(feasible)
}

/// Separable and collective workflows agree when only the individual l0
/// term is present; the collective value is also checked by enumeration.
/// Returns whether the case was feasible.
pub fn separable_check(case: &Case) -> Result<bool, String> {
    use groupcf::analysis::{explain_collective, explain_separable};
    use groupcf::solver::{brute_force_oracle, SolveStatus, DEFAULT_MAX_BINARIES};

    let lambda = case.cost.lambda_ind;
    let cost = CostParams::new(lambda, 0.0).unwrap();
    let sep = explain_separable(&case.group, &case.scorer, &case.fs, lambda, case.i_star, &options())
        .map_err(|e| format!("agreement: {e}"))?;
    let col = explain_collective(&case.group, &case.scorer, &case.fs, &cost, case.i_star, &options())
        .map_err(|e| format!("agreement: {e}"))?;
    if sep.status != col.status {
        return Err(format!("agreement: separable {:?}, collective {:?}", sep.status, col.status));
    }
    if col.status == SolveStatus::Infeasible {
        return Ok(false);
    }
    if col.status != SolveStatus::Optimal {
        return Err(format!("agreement: collective stopped with {:?}", col.status));
    }
    let (a, b) = (sep.total_cost().unwrap(), col.total_cost().unwrap());
    if !rel_close(a, b, 1e-6) {
        return Err(format!("agreement: separable {a} vs collective {b}"));
    }
    for e in [&sep, &col] {
        let bad = validity_problems(case.group.x0(), e.counterfactual.as_ref().unwrap(), &e.selected, &case.scorer, case.i_star);
        if !bad.is_empty() {
            return Err(format!("validity: {}", bad.join("; ")));
        }
    }
    let p = build_collective(&case.group, &case.scorer, &case.fs, &cost, case.i_star, None).unwrap();
    if binaries(&p) <= DEFAULT_MAX_BINARIES {
        let o = brute_force_oracle(&p, DEFAULT_MAX_BINARIES).map_err(|e| format!("agreement: {e}"))?;
        if !rel_close(o.objective.unwrap_or(f64::NAN), b, 1e-6) {
            return Err(format!("agreement: collective {b} vs enumeration {:?}", o.objective));
        }
    }
    Ok(true)
}

pub fn separable_suite(seed: u64, count: usize) -> Result<(), String> {
    let mut r = rng(seed);
    for k in 0..count {
        let mut case = if k % 4 == 3 {
            random_ensemble_case(&mut r, 3, 2, 2, 2)
        } else {
            random_linear_case(&mut r, 4, 3, false)
        };
        case.cost = CostParams::new(case.cost.lambda_ind, 0.0).unwrap();
        separable_check(&case).map_err(|e| format!("case {k}: {e}\n{case:?}"))?;
    }
    Ok(())
}

/// Optimal value of the collective problem on the rows in `subset`, all of
/// them selected; by enumeration when small enough, otherwise by search.
fn subset_cost(case: &Case, subset: &[usize]) -> Option<f64> {
    use groupcf::solver::{brute_force_oracle, solve_miqp, SolveStatus, DEFAULT_MAX_BINARIES};
    let group = case.group.select(subset).unwrap();
    let p = build_collective(&group, &case.scorer, &case.fs, &case.cost, subset.len(), None).unwrap();
    let r = if binaries(&p) <= DEFAULT_MAX_BINARIES {
        brute_force_oracle(&p, DEFAULT_MAX_BINARIES).unwrap()
    } else {
        solve_miqp(&p, &options()).unwrap()
    };
    assert!(matches!(r.status, SolveStatus::Optimal | SolveStatus::Infeasible));
    r.objective
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|&i| m & (1 << i) != 0).collect())
        .collect()
}

/// The selected subset of an outlier run is optimal among all subsets of
/// the same size.
pub fn outlier_check(case: &Case) -> Result<(), String> {
    use groupcf::analysis::detect_outliers;
    use groupcf::solver::SolveStatus;

    let n = case.group.n_instances();
    let fraction = case.i_star as f64 / n as f64;
    let report = detect_outliers(&case.group, &case.scorer, &case.fs, &case.cost, fraction, &options())
        .map_err(|e| e.to_string())?;
    if report.i_star != case.i_star {
        return Err(format!("fraction {fraction} gave I* = {}", report.i_star));
    }
    let best = subsets(n, case.i_star)
        .iter()
        .filter_map(|s| subset_cost(case, s))
        .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.min(c))));
    let e = &report.explanation;
    match (e.status, best) {
        (SolveStatus::Infeasible, None) => return Ok(()),
        (SolveStatus::Optimal, Some(_)) => {}
        (s, b) => return Err(format!("status {s:?} but best subset {b:?}")),
    }
    let best = best.unwrap();
    let total = e.total_cost().unwrap();
    if !rel_close(total, best, 1e-6) {
        return Err(format!("selection costs {total}, best subset {best}"));
    }
    if report.excluded_rows.len() != n - case.i_star {
        return Err(format!("{} rows excluded", report.excluded_rows.len()));
    }
    let chosen: Vec<usize> = (0..n).filter(|&i| e.selected[i]).collect();
    let own = subset_cost(case, &chosen).ok_or("selected subset is infeasible on its own")?;
    if !rel_close(own, best, 1e-6) {
        return Err(format!("selected subset costs {own}, best {best}"));
    }
    Ok(())
}

pub fn outlier_suite(seed: u64, count: usize) -> Result<(), String> {
    let mut r = rng(seed);
    for k in 0..count {
        let mut case = if k % 3 == 2 {
            random_ensemble_case(&mut r, 4, 2, 1, 2)
        } else {
            random_linear_case(&mut r, 5, 2, false)
        };
        let n = case.group.n_instances();
        if n < 2 {
            continue;
        }
        case.i_star = r.gen_range(1..n);
        outlier_check(&case).map_err(|e| format!("case {k}: {e}\n{case:?}"))?;
    }
    Ok(())
}

/// Cheapest way to lift a single linear score to `nu` when only the features
/// in some support may move: `s^2 / sum_{j in S} w_j^2` plus the l0 terms,
/// minimised over supports whose projected point stays in `[lo, hi]`.
pub fn projection_oracle(x0: &[f64], w: &[f64], b: f64, nu: f64, lo: &[f64], hi: &[f64], lambda: f64, max_support: usize) -> Option<(f64, Vec<f64>)> {
    let shift = nu - (w.iter().zip(x0).map(|(a, x)| a * x).sum::<f64>() + b);
    if shift <= 0.0 {
        return Some((0.0, x0.to_vec()));
    }
    let j = x0.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..1 << j {
        let support: Vec<usize> = (0..j).filter(|&f| mask & (1 << f) != 0).collect();
        if support.len() > max_support {
            continue;
        }
        let norm: f64 = support.iter().map(|&f| w[f] * w[f]).sum();
        if norm == 0.0 {
            continue;
        }
        let mut x = x0.to_vec();
        for &f in &support {
            x[f] += shift * w[f] / norm;
        }
        if (0..j).any(|f| x[f] < lo[f] - 1e-12 || x[f] > hi[f] + 1e-12) {
            continue;
        }
        let cost = shift * shift / norm + lambda * support.len() as f64;
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, x));
        }
    }
    best
}

fn expect(name: &str, got: Option<f64>, want: f64) -> Result<(), String> {
    match got {
        Some(g) if (g - want).abs() <= 1e-6 => Ok(()),
        _ => Err(format!("{name}: got {got:?}, expected {want}")),
    }
}

/// The small instances with values known in closed form.
pub fn closed_form_suite() -> Result<(), String> {
    use groupcf::analysis::{explain_collective, pareto_sweep};
    use groupcf::solver::SolveStatus;

    let opts = options();
    let lin = |w: Vec<f64>, b: f64| Scorer::Linear(LinearModel::new(w, b, 0.0).unwrap());
    let boxed = |lo: f64, hi: f64, j: usize| {
        FeasibleSet::new((0..j).map(|f| FeatureSpec::continuous(format!("f{f}"), lo, hi)).collect()).unwrap()
    };

    // Projection onto a halfspace.
    let g = InstanceGroup::from_rows(&[vec![-1.0]]).unwrap();
    let want = projection_oracle(&[-1.0], &[1.0], 0.0, 0.0, &[-1.0], &[1.0], 0.0, 1).unwrap().0;
    let e = explain_collective(&g, &lin(vec![1.0], 0.0), &boxed(-1.0, 1.0, 1), &CostParams::zero(), 1, &opts)
        .map_err(|e| e.to_string())?;
    expect("halfspace projection", e.total_cost(), want)?;
    expect("halfspace projection (literal)", e.total_cost(), 1.0)?;

    // Sparse versus dense perturbation as the individual l0 weight grows.
    let g = InstanceGroup::from_rows(&[vec![-1.0, 0.0]]).unwrap();
    let s = lin(vec![1.0, 1.0], 0.0);
    for lambda in [0.0, 0.3, 0.49, 0.51, 0.7, 2.0] {
        let want = projection_oracle(&[-1.0, 0.0], &[1.0, 1.0], 0.0, 0.0, &[-2.0; 2], &[2.0; 2], lambda, 2)
            .unwrap()
            .0;
        let e = explain_collective(&g, &s, &boxed(-2.0, 2.0, 2), &CostParams::new(lambda, 0.0).unwrap(), 1, &opts)
            .map_err(|e| e.to_string())?;
        expect(&format!("l0 switch at lambda_ind {lambda}"), e.total_cost(), want)?;
        let changed = e.global_changed().len();
        if changed != if lambda < 0.5 { 2 } else { 1 } {
            return Err(format!("lambda_ind {lambda}: {changed} features changed"));
        }
    }

    // Two instances sharing the global count: enumerate the global support.
    let rows = [vec![-1.0, 0.0], vec![-2.0, 0.0]];
    let g = InstanceGroup::from_rows(&rows).unwrap();
    for (lambda, literal) in [(1.0, 4.5), (3.0, 8.0)] {
        let want = [0b01u32, 0b10, 0b11]
            .iter()
            .map(|&mask| {
                let free = |f: usize| mask & (1 << f) != 0;
                let per: f64 = rows
                    .iter()
                    .map(|r| {
                        let lo: Vec<f64> = (0..2).map(|f| if free(f) { -2.0 } else { r[f] }).collect();
                        let hi: Vec<f64> = (0..2).map(|f| if free(f) { 2.0 } else { r[f] }).collect();
                        projection_oracle(r, &[1.0, 1.0], 0.0, 0.0, &lo, &hi, 0.0, 2).map_or(f64::INFINITY, |p| p.0)
                    })
                    .sum();
                per + lambda * mask.count_ones() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let e = explain_collective(&g, &s, &boxed(-2.0, 2.0, 2), &CostParams::new(0.0, lambda).unwrap(), 2, &opts)
            .map_err(|e| e.to_string())?;
        expect(&format!("two instances, lambda_glob {lambda}"), e.total_cost(), want)?;
        expect(&format!("two instances, lambda_glob {lambda} (literal)"), e.total_cost(), literal)?;
    }

    // Depth-one tree: both leaves enumerated, the positive one is reached by
    // moving to the split plus the margin.
    let eps = 1e-5;
    let tree = TreeNode::split(0, 0.5, TreeNode::leaf(-1), TreeNode::leaf(1)).with_numbered_leaves();
    let ens = TreeEnsemble::new(vec![WeightedTree { weight: 1.0, root: tree }], 0.5, eps).unwrap();
    let g = InstanceGroup::from_rows(&[vec![0.3]]).unwrap();
    let leaf_costs = [f64::INFINITY, (0.5f64 + eps).max(0.3) - 0.3];
    let want = leaf_costs.iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
    let e = explain_collective(&g, &Scorer::Ensemble(ens), &boxed(0.0, 1.0, 1), &CostParams::zero(), 1, &opts)
        .map_err(|e| e.to_string())?;
    expect("depth-one tree", e.total_cost(), want)?;
    expect("depth-one tree (literal)", e.total_cost(), (0.2 + eps) * (0.2 + eps))?;

    // Two features needed: budget 1 is infeasible, budget 2 projects.
    let g = InstanceGroup::from_rows(&[vec![0.0, 0.0]]).unwrap();
    let model = LinearModel::new(vec![1.0, 1.0], -1.5, 0.0).unwrap();
    let sweep = pareto_sweep(&g, &model, &boxed(0.0, 1.0, 2), TAU, 1, &[1, 2], &opts).map_err(|e| e.to_string())?;
    if sweep[0].status != SolveStatus::Infeasible
        || projection_oracle(&[0.0, 0.0], &[1.0, 1.0], -1.5, 0.0, &[0.0; 2], &[1.0; 2], 0.0, 1).is_some()
    {
        return Err(format!("budget 1: {:?}", sweep[0].status));
    }
    let want = projection_oracle(&[0.0, 0.0], &[1.0, 1.0], -1.5, 0.0, &[0.0; 2], &[1.0; 2], 0.0, 2).unwrap().0;
    expect("budget 2", sweep[1].quadratic_cost, want)?;
    expect("budget 2 (literal)", sweep[1].quadratic_cost, 1.125)?;
    Ok(())
}
