//! Instances, feature metadata, the feasible set of counterfactuals and the
//! perturbation cost.
//!
//! The cost of moving a group `x0` to `x` is
//!
//! ```text
//! sum_i |x0_i - x_i|_2^2 + lambda_ind * sum_i |x0_i - x_i|_0 + lambda_glob * gamma0
//! ```
//!
//! where `gamma0` counts the features changed for at least one instance. A
//! coordinate counts as changed when it moved by more than the tolerance
//! `tau` of [`CostParams`].

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::scorers::Scorer;

/// Default change tolerance in feature units.
pub const DEFAULT_TAU: f64 = 1e-6;

/// Slack allowed when checking data against declared bounds.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Integer,
    Binary,
}

/// Sense of a linear row `a . v (sense) rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }

    /// Signed violation of `lhs (sense) rhs`; zero or negative means satisfied.
    pub fn violation<T: Scalar>(self, lhs: T, rhs: T) -> T {
        match self {
            Sense::Le => lhs - rhs,
            Sense::Ge => rhs - lhs,
            Sense::Eq => (lhs - rhs).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpec<T> {
    pub name: String,
    pub kind: FeatureKind,
    pub lower: T,
    pub upper: T,
    pub immutable: bool,
    pub one_hot_group: Option<String>,
    /// Split margin is zero for this feature (one-hot dummies).
    pub split_epsilon_zero: bool,
}

impl<T: Scalar> FeatureSpec<T> {
    pub fn continuous(name: impl Into<String>, lower: T, upper: T) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous,
            lower,
            upper,
            immutable: false,
            one_hot_group: None,
            split_epsilon_zero: false,
        }
    }

    pub fn integer(name: impl Into<String>, lower: T, upper: T) -> Self {
        Self {
            kind: FeatureKind::Integer,
            ..Self::continuous(name, lower, upper)
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            kind: FeatureKind::Binary,
            ..Self::continuous(name, T::zero(), T::one())
        }
    }

    pub fn immutable(mut self) -> Self {
        self.immutable = true;
        self
    }

    /// Marks the feature as a dummy of a one-hot encoded category.
    pub fn one_hot(mut self, group: impl Into<String>) -> Self {
        self.kind = FeatureKind::Binary;
        self.lower = T::zero();
        self.upper = T::one();
        self.one_hot_group = Some(group.into());
        self.split_epsilon_zero = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite()) {
            return Err(Error::Unbounded {
                feature: self.name.clone(),
            });
        }
        if self.lower > self.upper {
            return Err(Error::Spec(format!(
                "feature {}: lower {} exceeds upper {}",
                self.name, self.lower, self.upper
            )));
        }
        if self.kind == FeatureKind::Binary && (self.lower != T::zero() || self.upper != T::one()) {
            return Err(Error::Spec(format!(
                "binary feature {} must have bounds [0, 1]",
                self.name
            )));
        }
        if self.one_hot_group.is_some() {
            if self.kind != FeatureKind::Binary {
                return Err(Error::Spec(format!(
                    "one-hot feature {} must be binary",
                    self.name
                )));
            }
            if !self.split_epsilon_zero {
                return Err(Error::Spec(format!(
                    "one-hot feature {} must use a zero split margin",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn is_integral(&self) -> bool {
        self.kind != FeatureKind::Continuous
    }
}

/// The group of instances `x0` (rows) to explain.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceGroup<T> {
    x0: Matrix<T>,
    row_ids: Vec<String>,
    feature_names: Vec<String>,
}

impl<T: Scalar> InstanceGroup<T> {
    pub fn new(x0: Matrix<T>, row_ids: Vec<String>, feature_names: Vec<String>) -> Result<Self> {
        let (i, j) = x0.shape();
        if i == 0 || j == 0 {
            return Err(Error::Dimension(format!("group must be non-empty, got {i}x{j}")));
        }
        if row_ids.len() != i {
            return Err(Error::Dimension(format!("{} row ids for {i} rows", row_ids.len())));
        }
        if feature_names.len() != j {
            return Err(Error::Dimension(format!(
                "{} feature names for {j} columns",
                feature_names.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &row_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Argument(format!("duplicate row id {id}")));
            }
        }
        if x0.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("instance values must be finite".into()));
        }
        Ok(Self {
            x0,
            row_ids,
            feature_names,
        })
    }

    /// Group with row ids `0..I` and feature names `f0..f{J-1}`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let x0 = Matrix::from_rows(rows)?;
        let ids = (0..x0.nrows()).map(|i| i.to_string()).collect();
        let names = (0..x0.ncols()).map(|j| format!("f{j}")).collect();
        Self::new(x0, ids, names)
    }

    pub fn x0(&self) -> &Matrix<T> {
        &self.x0
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_instances(&self) -> usize {
        self.x0.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x0.ncols()
    }

    pub fn instance(&self, i: usize) -> &[T] {
        self.x0.row(i)
    }

    /// Class (+1 / -1) of every row under `scorer` with its own threshold.
    pub fn predictions(&self, scorer: &Scorer<T>) -> Vec<i8> {
        self.x0.rows_iter().map(|r| scorer.predict(r)).collect()
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n_instances()) {
            return Err(Error::Argument(format!("row index {bad} out of range")));
        }
        Self::new(
            self.x0.select_rows(rows),
            rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            self.feature_names.clone(),
        )
    }
}

/// Extra linear row over the stacked counterfactual vector; coordinate
/// `(i, j)` has index `i * J + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkingRow<T> {
    pub coefficients: Vec<(usize, T)>,
    pub sense: Sense,
    pub rhs: T,
}

/// Feature boxes, integrality, immutability, one-hot groups and optional
/// linking rows. Together with a group this induces the feasible set of
/// every counterfactual.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleSet<T> {
    features: Vec<FeatureSpec<T>>,
    linking: Vec<LinkingRow<T>>,
}

impl<T: Scalar> FeasibleSet<T> {
    pub fn new(features: Vec<FeatureSpec<T>>) -> Result<Self> {
        Self::with_linking(features, Vec::new())
    }

    pub fn with_linking(features: Vec<FeatureSpec<T>>, linking: Vec<LinkingRow<T>>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Spec("at least one feature required".into()));
        }
        let mut names = HashSet::new();
        for f in &features {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(Error::Spec(format!("duplicate feature name {}", f.name)));
            }
        }
        Ok(Self { features, linking })
    }

    pub fn features(&self) -> &[FeatureSpec<T>] {
        &self.features
    }

    pub fn feature(&self, j: usize) -> &FeatureSpec<T> {
        &self.features[j]
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn linking_rows(&self) -> &[LinkingRow<T>] {
        &self.linking
    }

    pub fn has_linking(&self) -> bool {
        !self.linking.is_empty()
    }

    pub fn without_linking(&self) -> Self {
        Self {
            features: self.features.clone(),
            linking: Vec::new(),
        }
    }

    /// Value coordinate `(i, j)` is pinned to, if any: immutable features
    /// keep `x0`, degenerate boxes keep their single value.
    pub fn pinned_value(&self, x0_ij: T, j: usize) -> Option<T> {
        let f = &self.features[j];
        if f.immutable {
            Some(x0_ij)
        } else if f.lower == f.upper {
            Some(f.lower)
        } else {
            None
        }
    }

    /// One-hot groups as `(name, member feature indices)` in first-seen order.
    pub fn one_hot_groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (j, f) in self.features.iter().enumerate() {
            if let Some(g) = &f.one_hot_group {
                match out.iter_mut().find(|(name, _)| name == g) {
                    Some((_, members)) => members.push(j),
                    None => out.push((g.clone(), vec![j])),
                }
            }
        }
        out
    }

    /// Split margin for feature `j` given the ensemble-wide margin.
    pub fn split_epsilon(&self, j: usize, epsilon: T) -> T {
        if self.features[j].split_epsilon_zero {
            T::zero()
        } else {
            epsilon
        }
    }

    /// Checks a group against the feasible set: shape, bounds, integrality,
    /// one-hot sums and linking-row indices.
    pub fn check_group(&self, group: &InstanceGroup<T>) -> Result<()> {
        let j_count = self.n_features();
        if group.n_features() != j_count {
            return Err(Error::Dimension(format!(
                "group has {} features, feasible set {}",
                group.n_features(),
                j_count
            )));
        }
        let slack = T::lit(BOUND_SLACK);
        for (i, row) in group.x0().rows_iter().enumerate() {
            let rid = &group.row_ids()[i];
            for (j, (&v, f)) in row.iter().zip(&self.features).enumerate() {
                if v < f.lower - slack || v > f.upper + slack {
                    return Err(Error::Parse {
                        row: i,
                        column: f.name.clone(),
                        message: format!(
                            "value {v} of row {rid} outside bounds [{}, {}]",
                            f.lower, f.upper
                        ),
                    });
                }
                if f.is_integral() && (v - v.round()).abs() > slack {
                    return Err(Error::Parse {
                        row: i,
                        column: self.features[j].name.clone(),
                        message: format!("value {v} of row {rid} is not integral"),
                    });
                }
            }
            for (name, members) in self.one_hot_groups() {
                let s: T = members.iter().map(|&j| row[j]).sum();
                if (s - T::one()).abs() > slack {
                    return Err(Error::Parse {
                        row: i,
                        column: name.clone(),
                        message: format!("one-hot group {name} of row {rid} sums to {s}"),
                    });
                }
            }
        }
        let stacked = group.n_instances() * j_count;
        for (k, link) in self.linking.iter().enumerate() {
            if let Some((idx, _)) = link.coefficients.iter().find(|(idx, _)| *idx >= stacked) {
                return Err(Error::Argument(format!(
                    "linking row {k} references stacked index {idx} >= {stacked}"
                )));
            }
        }
        Ok(())
    }
}

/// Boxes from the observed per-column extremes. Binary columns keep `[0, 1]`.
pub fn default_bounds<T: Scalar>(group: &InstanceGroup<T>, kinds: &[FeatureKind]) -> Result<FeasibleSet<T>> {
    if kinds.len() != group.n_features() {
        return Err(Error::Dimension(format!(
            "{} kinds for {} features",
            kinds.len(),
            group.n_features()
        )));
    }
    let x0 = group.x0();
    let specs = kinds
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let name = group.feature_names()[j].clone();
            match kind {
                FeatureKind::Binary => FeatureSpec::binary(name),
                _ => {
                    let lo = x0.column(j).fold(T::infinity(), T::min);
                    let hi = x0.column(j).fold(T::neg_infinity(), T::max);
                    FeatureSpec {
                        kind,
                        ..FeatureSpec::continuous(name, lo, hi)
                    }
                }
            }
        })
        .collect();
    FeasibleSet::new(specs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams<T> {
    pub lambda_ind: T,
    pub lambda_glob: T,
    /// A coordinate counts as changed when it moved by more than `tau`.
    pub tau: T,
}

impl<T: Scalar> CostParams<T> {
    pub fn new(lambda_ind: T, lambda_glob: T) -> Result<Self> {
        Self::with_tau(lambda_ind, lambda_glob, T::lit(DEFAULT_TAU))
    }

    pub fn with_tau(lambda_ind: T, lambda_glob: T, tau: T) -> Result<Self> {
        if !(lambda_ind >= T::zero() && lambda_glob >= T::zero()) {
            return Err(Error::Argument(format!(
                "sparsity weights must be nonnegative (got {lambda_ind}, {lambda_glob})"
            )));
        }
        if !(tau > T::zero()) {
            return Err(Error::Argument(format!("change tolerance must be positive, got {tau}")));
        }
        Ok(Self {
            lambda_ind,
            lambda_glob,
            tau,
        })
    }

    pub fn zero() -> Self {
        Self {
            lambda_ind: T::zero(),
            lambda_glob: T::zero(),
            tau: T::lit(DEFAULT_TAU),
        }
    }
}

/// Per-coordinate change flags and the global changed-feature flags.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeSet {
    pub per_instance: Matrix<bool>,
    pub global: Vec<bool>,
}

impl ChangeSet {
    pub fn global_indices(&self) -> Vec<usize> {
        self.global
            .iter()
            .enumerate()
            .filter_map(|(j, &c)| c.then_some(j))
            .collect()
    }

    pub fn global_count(&self) -> usize {
        self.global.iter().filter(|&&c| c).count()
    }

    pub fn individual_count(&self) -> usize {
        self.per_instance.as_slice().iter().filter(|&&c| c).count()
    }

    pub fn instance_count(&self, i: usize) -> usize {
        self.per_instance.row(i).iter().filter(|&&c| c).count()
    }
}

pub fn changed_features<T: Scalar>(x0: &Matrix<T>, x: &Matrix<T>, tau: T) -> Result<ChangeSet> {
    x0.ensure_same_shape(x)?;
    let (rows, cols) = x0.shape();
    let mut per_instance = Matrix::filled(rows, cols, false);
    let mut global = vec![false; cols];
    for i in 0..rows {
        for j in 0..cols {
            if (x0.get(i, j) - x.get(i, j)).abs() > tau {
                per_instance.set(i, j, true);
                global[j] = true;
            }
        }
    }
    Ok(ChangeSet {
        per_instance,
        global,
    })
}

/// The three additive parts of the cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown<T> {
    pub quadratic: T,
    pub individual_l0: T,
    pub global_l0: T,
    pub total: T,
}

pub fn cost_breakdown<T: Scalar>(x0: &Matrix<T>, x: &Matrix<T>, params: &CostParams<T>) -> Result<CostBreakdown<T>> {
    let changes = changed_features(x0, x, params.tau)?;
    let quadratic: T = x0
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let individual_l0 = params.lambda_ind * T::from_usize_lossy(changes.individual_count());
    let global_l0 = params.lambda_glob * T::from_usize_lossy(changes.global_count());
    Ok(CostBreakdown {
        quadratic,
        individual_l0,
        global_l0,
        total: quadratic + individual_l0 + global_l0,
    })
}

pub fn cost_of<T: Scalar>(x0: &Matrix<T>, x: &Matrix<T>, params: &CostParams<T>) -> Result<T> {
    Ok(cost_breakdown(x0, x, params)?.total)
}

/// Single-instance cost `|x0 - x|^2 + lambda_ind |x0 - x|_0`.
pub fn instance_cost<T: Scalar>(x0: &[T], x: &[T], lambda_ind: T, tau: T) -> T {
    x0.iter()
        .zip(x)
        .map(|(&a, &b)| {
            let d = a - b;
            let l0 = if d.abs() > tau { lambda_ind } else { T::zero() };
            d * d + l0
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_costs_nothing() {
        let x0 = m(&[vec![0.3, 0.1], vec![0.9, 0.2]]);
        let p = CostParams::new(5.0, 7.0).unwrap();
        assert_eq!(cost_of(&x0, &x0, &p).unwrap(), 0.0);
    }

    #[test]
    fn single_instance_cost() {
        let p = CostParams::new(0.02, 0.2).unwrap();
        let c = cost_of(&m(&[vec![0.0, 0.0]]), &m(&[vec![1.0, 0.0]]), &p).unwrap();
        assert!((c - 1.22).abs() < 1e-12);
    }

    #[test]
    fn global_sparsity_counts_features_changed_anywhere() {
        let p = CostParams::new(0.0, 1.0).unwrap();
        let x0 = m(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let x = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(cost_of(&x0, &x, &p).unwrap(), 4.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = CostParams::<f64>::zero();
        assert!(matches!(
            cost_of(&m(&[vec![0.0]]), &m(&[vec![0.0, 1.0]]), &p),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn default_bounds_single_row() {
        let g = InstanceGroup::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let fs = default_bounds(&g, &[FeatureKind::Continuous; 2]).unwrap();
        assert_eq!((fs.feature(0).lower, fs.feature(0).upper), (0.3, 0.3));
        assert_eq!((fs.feature(1).lower, fs.feature(1).upper), (0.7, 0.7));
    }

    #[test]
    fn default_bounds_binary_column() {
        let g = InstanceGroup::from_rows(&[vec![0.0, 0.5], vec![1.0, 0.25]]).unwrap();
        let fs = default_bounds(&g, &[FeatureKind::Binary, FeatureKind::Continuous]).unwrap();
        assert_eq!(fs.feature(0).kind, FeatureKind::Binary);
        assert_eq!((fs.feature(0).lower, fs.feature(0).upper), (0.0, 1.0));
        assert_eq!((fs.feature(1).lower, fs.feature(1).upper), (0.25, 0.5));
    }

    #[test]
    fn changed_features_cases() {
        let x0 = m(&[vec![0.0; 5], vec![0.0; 5]]);
        let none = changed_features(&x0, &x0, 1e-6).unwrap();
        assert_eq!(none.global_count(), 0);

        let mut x = x0.clone();
        x.set(1, 3, 0.4);
        let one = changed_features(&x0, &x, 1e-6).unwrap();
        assert_eq!(one.global_indices(), vec![3]);
        assert!(one.per_instance.get(1, 3));

        let mut tiny = x0.clone();
        tiny.set(0, 0, 1e-9);
        assert_eq!(changed_features(&x0, &tiny, 1e-6).unwrap().global_count(), 0);
    }

    #[test]
    fn spec_invariants() {
        assert!(FeatureSpec::continuous("a", 1.0, 0.0).validate().is_err());
        let mut b = FeatureSpec::<f64>::binary("b");
        b.upper = 2.0;
        assert!(b.validate().is_err());
        let mut oh = FeatureSpec::<f64>::binary("c").one_hot("g");
        oh.split_epsilon_zero = false;
        assert!(oh.validate().is_err());
        assert!(FeatureSpec::continuous("d", 0.0, f64::INFINITY).validate().is_err());
    }

    #[test]
    fn one_hot_sum_checked() {
        let fs = FeasibleSet::new(vec![
            FeatureSpec::<f64>::binary("a").one_hot("g"),
            FeatureSpec::binary("b").one_hot("g"),
        ])
        .unwrap();
        let ok = InstanceGroup::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(fs.check_group(&ok).is_ok());
        let bad = InstanceGroup::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert!(fs.check_group(&bad).is_err());
    }

    #[test]
    fn duplicate_row_ids_rejected() {
        let x0 = m(&[vec![0.0], vec![1.0]]);
        assert!(InstanceGroup::new(x0, vec!["a".into(), "a".into()], vec!["f".into()]).is_err());
    }

    fn pair() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        (1usize..5, 1usize..5).prop_flat_map(|(i, j)| {
            let row = || prop::collection::vec(-2.0f64..2.0, j);
            (
                prop::collection::vec(row(), i),
                prop::collection::vec(row(), i),
            )
        })
    }

    proptest! {
        #[test]
        fn cost_monotone_in_lambdas((a, b) in pair(), li in 0.0f64..3.0, lg in 0.0f64..3.0, d in 0.0f64..1.0) {
            let (x0, x) = (m(&a), m(&b));
            let base = cost_of(&x0, &x, &CostParams::new(li, lg).unwrap()).unwrap();
            prop_assert!(cost_of(&x0, &x, &CostParams::new(li + d, lg).unwrap()).unwrap() >= base);
            prop_assert!(cost_of(&x0, &x, &CostParams::new(li, lg + d).unwrap()).unwrap() >= base);
        }

        #[test]
        fn cost_invariant_under_row_permutation((a, b) in pair(), li in 0.0f64..3.0, lg in 0.0f64..3.0) {
            let p = CostParams::new(li, lg).unwrap();
            let c = cost_of(&m(&a), &m(&b), &p).unwrap();
            let (mut ra, mut rb) = (a.clone(), b.clone());
            ra.reverse();
            rb.reverse();
            let cr = cost_of(&m(&ra), &m(&rb), &p).unwrap();
            prop_assert!((c - cr).abs() <= 1e-12 * (1.0 + c.abs()));
        }

        #[test]
        fn zero_cost_iff_unchanged((a, b) in pair(), li in 0.0f64..3.0, lg in 0.0f64..3.0) {
            let p = CostParams::new(li, lg).unwrap();
            let (x0, x) = (m(&a), m(&b));
            prop_assert_eq!(cost_of(&x0, &x, &p).unwrap() > 0.0, a != b);
            prop_assert_eq!(cost_of(&x0, &x0, &p).unwrap(), 0.0);
        }

        #[test]
        fn global_term_counts_changed_set((a, b) in pair()) {
            let (x0, x) = (m(&a), m(&b));
            let p = CostParams::new(0.0, 1.0).unwrap();
            let br = cost_breakdown(&x0, &x, &p).unwrap();
            let set = changed_features(&x0, &x, p.tau).unwrap();
            prop_assert_eq!(br.global_l0, set.global_count() as f64);
        }
    }
}
