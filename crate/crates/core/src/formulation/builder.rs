use std::collections::BTreeMap;

use crate::domain::{CostParams, FeasibleSet, InstanceGroup, Sense};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::scorers::{ancestor_splits, linear_score, LinearModel, PathSplits, Scorer, TreeEnsemble, TreeNode};

use super::bigm::{big_m_feature, big_m_score, split_big_m, BigMBundle, SplitBigM};
use super::{
    Indicator, MiqpProblem, Objective, ProblemMeta, Row, RowRole, VarKind, VarTag, VariableSpace,
};

/// Collective problem for either scorer kind. With `f_max` the global
/// sparsity term becomes the hard budget `sum xi* <= f_max`.
pub fn build_collective<T: Scalar>(
    group: &InstanceGroup<T>,
    scorer: &Scorer<T>,
    fs: &FeasibleSet<T>,
    cost: &CostParams<T>,
    i_star: usize,
    f_max: Option<usize>,
) -> Result<MiqpProblem<T>> {
    Compiler {
        group,
        scorer,
        fs,
        cost: *cost,
        i_star,
        f_max,
        single: false,
    }
    .compile()
}

/// Linear-score collective problem; `f_max` selects the hard-budget variant.
pub fn build_colce_lr<T: Scalar>(
    group: &InstanceGroup<T>,
    model: &LinearModel<T>,
    fs: &FeasibleSet<T>,
    cost: &CostParams<T>,
    i_star: usize,
    f_max: Option<usize>,
) -> Result<MiqpProblem<T>> {
    build_collective(group, &Scorer::Linear(model.clone()), fs, cost, i_star, f_max)
}

pub fn build_colce_atm<T: Scalar>(
    group: &InstanceGroup<T>,
    ens: &TreeEnsemble<T>,
    fs: &FeasibleSet<T>,
    cost: &CostParams<T>,
    i_star: usize,
) -> Result<MiqpProblem<T>> {
    build_collective(group, &Scorer::Ensemble(ens.clone()), fs, cost, i_star, None)
}

/// Single-instance problem: selection fixed to 1, no global sparsity term.
/// Linking rows of `fs` are ignored.
pub fn build_cesep<T: Scalar>(
    instance: &[T],
    scorer: &Scorer<T>,
    fs: &FeasibleSet<T>,
    lambda_ind: T,
    nu: T,
) -> Result<MiqpProblem<T>> {
    let names = fs.features().iter().map(|f| f.name.clone()).collect();
    let group = InstanceGroup::new(Matrix::from_rows(&[instance.to_vec()])?, vec!["0".into()], names)?;
    let scorer = scorer.clone().with_nu(nu);
    let cost = CostParams::new(lambda_ind, T::zero())?;
    Compiler {
        group: &group,
        scorer: &scorer,
        fs: &fs.without_linking(),
        cost,
        i_star: 1,
        f_max: None,
        single: true,
    }
    .compile()
}

struct Compiler<'a, T> {
    group: &'a InstanceGroup<T>,
    scorer: &'a Scorer<T>,
    fs: &'a FeasibleSet<T>,
    cost: CostParams<T>,
    i_star: usize,
    f_max: Option<usize>,
    single: bool,
}

struct LeafPath<T> {
    id: usize,
    class: i8,
    splits: PathSplits<T>,
}

impl<T: Scalar> Compiler<'_, T> {
    fn check(&self) -> Result<()> {
        let (n, j) = (self.group.n_instances(), self.group.n_features());
        self.fs.check_group(self.group)?;
        self.scorer.check_features(j)?;
        if self.i_star > n {
            return Err(Error::Argument(format!("I* = {} exceeds group size {n}", self.i_star)));
        }
        if let Some(f) = self.f_max {
            if f > j {
                return Err(Error::Argument(format!("F_max = {f} exceeds feature count {j}")));
            }
            if self.cost.lambda_glob > T::zero() {
                return Err(Error::Argument(
                    "a feature budget and a positive global sparsity weight are mutually exclusive".into(),
                ));
            }
        }
        if self.single && n != 1 {
            return Err(Error::Argument("single-instance problem needs exactly one row".into()));
        }
        Ok(())
    }

    fn compile(&self) -> Result<MiqpProblem<T>> {
        self.check()?;
        let (n, jn) = (self.group.n_instances(), self.group.n_features());
        let x0 = self.group.x0();
        let mut vars = VariableSpace::new();
        let mut rows: Vec<Row<T>> = Vec::new();

        // Counterfactual coordinates; pinned ones get a degenerate box.
        let mut pinned = Matrix::filled(n, jn, false);
        for i in 0..n {
            for j in 0..jn {
                let f = self.fs.feature(j);
                let kind = match f.kind {
                    crate::domain::FeatureKind::Continuous => VarKind::Continuous,
                    crate::domain::FeatureKind::Integer => VarKind::Integer,
                    crate::domain::FeatureKind::Binary => VarKind::Binary,
                };
                let (lo, hi) = match self.fs.pinned_value(x0.get(i, j), j) {
                    Some(v) => {
                        pinned.set(i, j, true);
                        (v, v)
                    }
                    None => (f.lower, f.upper),
                };
                vars.add(VarTag::X { instance: i, feature: j }, kind, lo, hi)?;
            }
        }
        let x_var = |i: usize, j: usize| i * jn + j;

        let mut big_m = BigMBundle {
            feature: Matrix::filled(n, jn, T::zero()),
            score: Vec::new(),
            splits: Vec::new(),
        };

        // Score products of the linear case.
        if let Scorer::Linear(model) = self.scorer {
            for i in 0..n {
                let lo: Vec<T> = (0..jn).map(|j| vars.get(x_var(i, j)).lower).collect();
                let hi: Vec<T> = (0..jn).map(|j| vars.get(x_var(i, j)).upper).collect();
                let m = big_m_score(model, &lo, &hi)?;
                big_m.score.push(m);
                vars.add(VarTag::ScoreProduct { instance: i }, VarKind::Continuous, -m, m)?;
            }
        }

        // Change indicators.
        for i in 0..n {
            for j in 0..jn {
                if pinned.get(i, j) {
                    continue;
                }
                let f = self.fs.feature(j);
                let m = big_m_feature(x0.get(i, j), f.lower, f.upper)?;
                big_m.feature.set(i, j, m);
                let xi = vars.add(VarTag::Change { instance: i, feature: j }, VarKind::Binary, T::zero(), T::one())?;
                let ind = Some(Indicator {
                    var: xi,
                    relaxed_at: T::one(),
                    big_m: m,
                });
                // x0 - x <= M xi  and  x - x0 <= M xi
                rows.push(Row {
                    coeffs: vec![(x_var(i, j), -T::one()), (xi, -m)],
                    sense: Sense::Le,
                    rhs: -x0.get(i, j),
                    role: RowRole::ChangeIndicator,
                    indicator: ind,
                });
                rows.push(Row {
                    coeffs: vec![(x_var(i, j), T::one()), (xi, -m)],
                    sense: Sense::Le,
                    rhs: x0.get(i, j),
                    role: RowRole::ChangeIndicator,
                    indicator: ind,
                });
            }
        }

        if !self.single {
            let mut budget = Vec::new();
            for j in 0..jn {
                let children: Vec<usize> = (0..n)
                    .filter_map(|i| vars.index_of(VarTag::Change { instance: i, feature: j }))
                    .collect();
                if children.is_empty() {
                    continue;
                }
                let g = vars.add(VarTag::GlobalChange { feature: j }, VarKind::Binary, T::zero(), T::one())?;
                budget.push((g, T::one()));
                for xi in children {
                    rows.push(Row {
                        coeffs: vec![(xi, T::one()), (g, -T::one())],
                        sense: Sense::Le,
                        rhs: T::zero(),
                        role: RowRole::GlobalLink,
                        indicator: None,
                    });
                }
            }
            if let Some(f) = self.f_max {
                rows.push(Row {
                    coeffs: budget,
                    sense: Sense::Le,
                    rhs: T::from_usize_lossy(f),
                    role: RowRole::FeatureBudget,
                    indicator: None,
                });
            }
        }

        // Selection flags.
        let mut select = Vec::with_capacity(n);
        for i in 0..n {
            let lo = if self.single { T::one() } else { T::zero() };
            select.push(vars.add(VarTag::Select { instance: i }, VarKind::Binary, lo, T::one())?);
        }
        if !self.single {
            rows.push(Row {
                coeffs: select.iter().map(|&y| (y, T::one())).collect(),
                sense: Sense::Eq,
                rhs: T::from_usize_lossy(self.i_star),
                role: RowRole::Cardinality,
                indicator: None,
            });
        }

        match self.scorer {
            Scorer::Linear(model) => {
                self.linear_rows(model, &vars, &select, &big_m.score, &mut rows, x_var);
            }
            Scorer::Ensemble(ens) => {
                self.ensemble_rows(ens, &mut vars, &select, &mut big_m.splits, &mut rows, x_var)?;
            }
        }

        // Feasible-set rows.
        let groups = self.fs.one_hot_groups();
        for i in 0..n {
            for (_, members) in &groups {
                rows.push(Row {
                    coeffs: members.iter().map(|&j| (x_var(i, j), T::one())).collect(),
                    sense: Sense::Eq,
                    rhs: T::one(),
                    role: RowRole::OneHot,
                    indicator: None,
                });
            }
        }
        for link in self.fs.linking_rows() {
            rows.push(Row {
                coeffs: link.coefficients.clone(),
                sense: link.sense,
                rhs: link.rhs,
                role: RowRole::Linking,
                indicator: None,
            });
        }

        // sum (x - x0)^2 expanded, plus the sparsity weights.
        let nv = vars.len();
        let mut quadratic = vec![T::zero(); nv];
        let mut linear = vec![T::zero(); nv];
        let mut constant = T::zero();
        for i in 0..n {
            for j in 0..jn {
                let a = x0.get(i, j);
                quadratic[x_var(i, j)] = T::one();
                linear[x_var(i, j)] = -(a + a);
                constant += a * a;
            }
        }
        for (k, var) in vars.iter().enumerate() {
            match var.tag {
                VarTag::Change { .. } => linear[k] = self.cost.lambda_ind,
                VarTag::GlobalChange { .. } if self.f_max.is_none() => linear[k] = self.cost.lambda_glob,
                _ => {}
            }
        }

        let cost = if self.single {
            CostParams {
                lambda_glob: T::zero(),
                ..self.cost
            }
        } else {
            self.cost
        };
        let problem = MiqpProblem {
            vars,
            rows,
            objective: Objective {
                quadratic,
                linear,
                constant,
            },
            meta: ProblemMeta {
                x0: x0.clone(),
                row_ids: self.group.row_ids().to_vec(),
                feature_names: self.group.feature_names().to_vec(),
                i_star: self.i_star,
                cost,
                f_max: self.f_max,
                scorer: self.scorer.kind(),
                nu: self.scorer.nu(),
                single: self.single,
            },
            big_m,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Product `u = y (w.x + b)` and the threshold `u >= nu y`.
    fn linear_rows(
        &self,
        model: &LinearModel<T>,
        vars: &VariableSpace<T>,
        select: &[usize],
        score_m: &[T],
        rows: &mut Vec<Row<T>>,
        x_var: impl Fn(usize, usize) -> usize,
    ) {
        let nu = self.scorer.nu();
        let b = model.intercept;
        for (i, &y) in select.iter().enumerate() {
            let u = vars
                .index_of(VarTag::ScoreProduct { instance: i })
                .expect("score product declared");
            let m = score_m[i];
            let mut push = |coeffs: Vec<(usize, T)>, sense, rhs, relax: Option<T>| {
                rows.push(Row {
                    coeffs,
                    sense,
                    rhs,
                    role: RowRole::ScoreProduct,
                    indicator: relax.map(|relaxed_at| Indicator {
                        var: y,
                        relaxed_at,
                        big_m: m,
                    }),
                });
            };
            // u >= nu y
            push(vec![(u, T::one()), (y, -nu)], Sense::Ge, T::zero(), None);
            // -M y <= u <= M y
            push(vec![(u, T::one()), (y, -m)], Sense::Le, T::zero(), Some(T::one()));
            push(vec![(u, T::one()), (y, m)], Sense::Ge, T::zero(), Some(T::one()));
            // u <= w.x + b + (1 - y) M  and  u >= w.x + b - (1 - y) M
            let wx = |sign: T| -> Vec<(usize, T)> {
                model
                    .weights
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w != T::zero())
                    .map(|(j, &w)| (x_var(i, j), sign * w))
                    .collect()
            };
            let mut le = vec![(u, T::one())];
            le.extend(wx(-T::one()));
            le.push((y, m));
            push(le, Sense::Le, b + m, Some(T::zero()));
            let mut ge = vec![(u, T::one())];
            ge.extend(wx(-T::one()));
            ge.push((y, -m));
            push(ge, Sense::Ge, b - m, Some(T::zero()));

            // An instance that starts below the threshold must change some
            // features, enough of them to close the score gap:
            // sum_j gain_j xi_j >= (nu - f(x0)) y.
            let x0 = self.group.instance(i);
            let gap = nu - linear_score(model, x0).expect("checked lengths");
            if gap > T::zero() {
                let mut cover = Vec::new();
                for (j, &w) in model.weights.iter().enumerate() {
                    let Some(xi) = vars.index_of(VarTag::Change { instance: i, feature: j }) else {
                        continue;
                    };
                    let var = vars.get(x_var(i, j));
                    let gain = if w > T::zero() {
                        w * (var.upper - x0[j])
                    } else {
                        w * (var.lower - x0[j])
                    };
                    if gain > T::zero() {
                        cover.push((xi, gain.min(gap)));
                    }
                }
                cover.push((y, -gap));
                rows.push(Row {
                    coeffs: cover,
                    sense: Sense::Ge,
                    rhs: T::zero(),
                    role: RowRole::Implied,
                    indicator: None,
                });
            }
        }
    }

    fn ensemble_rows(
        &self,
        ens: &TreeEnsemble<T>,
        vars: &mut VariableSpace<T>,
        select: &[usize],
        split_ms: &mut Vec<SplitBigM<T>>,
        rows: &mut Vec<Row<T>>,
        x_var: impl Fn(usize, usize) -> usize,
    ) -> Result<()> {
        let nu = self.scorer.nu();
        let margin = |j: usize| self.fs.split_epsilon(j, ens.epsilon);
        let constants = |j: usize, c: T| -> Result<(T, T)> {
            let f = self.fs.feature(j);
            split_big_m(f.lower, f.upper, c, margin(j))
        };

        let mut paths: Vec<Vec<LeafPath<T>>> = Vec::with_capacity(ens.trees.len());
        for (t, tree) in ens.trees.iter().enumerate() {
            collect_split_constants(&tree.root, t, &constants, &margin, split_ms)?;
            let leaves = tree
                .root
                .leaves()
                .into_iter()
                .map(|(id, class)| {
                    Ok(LeafPath {
                        id,
                        class,
                        splits: ancestor_splits(&tree.root, id)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            paths.push(leaves);
        }

        for (i, &y) in select.iter().enumerate() {
            let mut score_row = Vec::new();
            for (t, leaves) in paths.iter().enumerate() {
                let mut one_leaf = Vec::with_capacity(leaves.len());
                let mut forcing: BTreeMap<usize, Vec<(usize, T)>> = BTreeMap::new();
                let mut raise: BTreeMap<usize, Vec<(usize, T)>> = BTreeMap::new();
                let mut lower: BTreeMap<usize, Vec<(usize, T)>> = BTreeMap::new();
                for leaf in leaves {
                    let z = vars.add(
                        VarTag::Leaf {
                            instance: i,
                            tree: t,
                            leaf: leaf.id,
                        },
                        VarKind::Binary,
                        T::zero(),
                        T::one(),
                    )?;
                    one_leaf.push((z, T::one()));
                    // Features whose original value fails a condition on
                    // the path must change when this leaf is reached.
                    let x0 = self.group.instance(i);
                    let mut forced: Vec<usize> = leaf
                        .splits
                        .left
                        .iter()
                        .filter(|s| x0[s.feature] > s.threshold - margin(s.feature))
                        .chain(
                            leaf.splits
                                .right
                                .iter()
                                .filter(|s| x0[s.feature] < s.threshold + margin(s.feature)),
                        )
                        .map(|s| s.feature)
                        .collect();
                    forced.sort_unstable();
                    forced.dedup();
                    for j in forced {
                        forcing.entry(j).or_default().push((z, T::one()));
                    }
                    // Tightest condition per feature on this path.
                    let mut floor: BTreeMap<usize, T> = BTreeMap::new();
                    for s in &leaf.splits.right {
                        let c = s.threshold + margin(s.feature);
                        let e = floor.entry(s.feature).or_insert(c);
                        *e = e.max(c);
                    }
                    for (j, c) in floor {
                        raise.entry(j).or_default().push((z, c));
                    }
                    let mut ceiling: BTreeMap<usize, T> = BTreeMap::new();
                    for s in &leaf.splits.left {
                        let c = s.threshold - margin(s.feature);
                        let e = ceiling.entry(s.feature).or_insert(c);
                        *e = e.min(c);
                    }
                    for (j, c) in ceiling {
                        lower.entry(j).or_default().push((z, c));
                    }
                    for s in &leaf.splits.left {
                        let (m1, _) = constants(s.feature, s.threshold)?;
                        // x - M1 (1 - z) + eps <= c
                        rows.push(Row {
                            coeffs: vec![(x_var(i, s.feature), T::one()), (z, m1)],
                            sense: Sense::Le,
                            rhs: s.threshold - margin(s.feature) + m1,
                            role: RowRole::SplitLeft,
                            indicator: Some(Indicator {
                                var: z,
                                relaxed_at: T::zero(),
                                big_m: m1,
                            }),
                        });
                    }
                    for s in &leaf.splits.right {
                        let (_, m2) = constants(s.feature, s.threshold)?;
                        // x + M2 (1 - z) - eps >= c
                        rows.push(Row {
                            coeffs: vec![(x_var(i, s.feature), T::one()), (z, -m2)],
                            sense: Sense::Ge,
                            rhs: s.threshold + margin(s.feature) - m2,
                            role: RowRole::SplitRight,
                            indicator: Some(Indicator {
                                var: z,
                                relaxed_at: T::zero(),
                                big_m: m2,
                            }),
                        });
                    }
                    if leaf.class == 1 {
                        let v = vars.add(
                            VarTag::LeafVote {
                                instance: i,
                                tree: t,
                                leaf: leaf.id,
                            },
                            VarKind::Binary,
                            T::zero(),
                            T::one(),
                        )?;
                        let product = |coeffs, sense, rhs| Row {
                            coeffs,
                            sense,
                            rhs,
                            role: RowRole::LeafVote,
                            indicator: None,
                        };
                        rows.push(product(vec![(v, T::one()), (y, -T::one())], Sense::Le, T::zero()));
                        rows.push(product(vec![(v, T::one()), (z, -T::one())], Sense::Le, T::zero()));
                        rows.push(product(
                            vec![(v, T::one()), (y, -T::one()), (z, -T::one())],
                            Sense::Ge,
                            -T::one(),
                        ));
                        if ens.trees[t].weight != T::zero() {
                            score_row.push((v, ens.trees[t].weight));
                        }
                    }
                }
                rows.push(Row {
                    coeffs: one_leaf,
                    sense: Sense::Eq,
                    rhs: T::one(),
                    role: RowRole::OneLeaf,
                    indicator: None,
                });
                // One leaf per tree: x_ij >= lb + sum_l (c_l + eps - lb) z_l over
                // leaves that need x_ij >= c_l + eps, and symmetrically above.
                for (j, leaves) in std::mem::take(&mut raise) {
                    let lb = vars.get(x_var(i, j)).lower;
                    let mut coeffs: Vec<(usize, T)> = leaves
                        .into_iter()
                        .filter(|&(_, c)| c > lb)
                        .map(|(z, c)| (z, lb - c))
                        .collect();
                    if !coeffs.is_empty() {
                        coeffs.push((x_var(i, j), T::one()));
                        rows.push(Row {
                            coeffs,
                            sense: Sense::Ge,
                            rhs: lb,
                            role: RowRole::Implied,
                            indicator: None,
                        });
                    }
                }
                for (j, leaves) in std::mem::take(&mut lower) {
                    let ub = vars.get(x_var(i, j)).upper;
                    let mut coeffs: Vec<(usize, T)> = leaves
                        .into_iter()
                        .filter(|&(_, c)| c < ub)
                        .map(|(z, c)| (z, ub - c))
                        .collect();
                    if !coeffs.is_empty() {
                        coeffs.push((x_var(i, j), T::one()));
                        rows.push(Row {
                            coeffs,
                            sense: Sense::Le,
                            rhs: ub,
                            role: RowRole::Implied,
                            indicator: None,
                        });
                    }
                }
                // One leaf per tree, so the leaves forcing feature j add up
                // to at most xi_ij.
                for (j, mut coeffs) in std::mem::take(&mut forcing) {
                    if let Some(xi) = vars.index_of(VarTag::Change { instance: i, feature: j }) {
                        coeffs.push((xi, -T::one()));
                        rows.push(Row {
                            coeffs,
                            sense: Sense::Le,
                            rhs: T::zero(),
                            role: RowRole::Implied,
                            indicator: None,
                        });
                    }
                }
            }
            score_row.push((y, -nu));
            rows.push(Row {
                coeffs: score_row,
                sense: Sense::Ge,
                rhs: T::zero(),
                role: RowRole::EnsembleScore,
                indicator: None,
            });
        }
        Ok(())
    }
}

fn collect_split_constants<T: Scalar>(
    node: &TreeNode<T>,
    tree: usize,
    constants: &impl Fn(usize, T) -> Result<(T, T)>,
    margin: &impl Fn(usize) -> T,
    out: &mut Vec<SplitBigM<T>>,
) -> Result<()> {
    if let TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    } = node
    {
        let (l, r) = constants(*feature, *threshold)?;
        out.push(SplitBigM {
            tree,
            feature: *feature,
            threshold: *threshold,
            epsilon: margin(*feature),
            left: l,
            right: r,
        });
        collect_split_constants(left, tree, constants, margin, out)?;
        collect_split_constants(right, tree, constants, margin, out)?;
    }
    Ok(())
}
