//! Compilation of collective counterfactual problems into mixed-integer
//! convex quadratic programs.
//!
//! A [`MiqpProblem`] has continuous, binary and integer variables with
//! boxes, sparse linear rows and a diagonal convex quadratic objective.
//! Every variable carries a [`VarTag`] saying what it encodes. Rows that
//! are switched off by a binary through a big-M constant record that binary
//! as their [`Indicator`] so the constants can be audited.

mod audit;
mod bigm;
mod builder;
mod extract;
mod lp_format;

use std::collections::HashMap;
use std::fmt;

use crate::domain::{CostParams, Sense};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::scorers::ScorerKind;

pub use audit::{audit_big_m, BigMViolation};
pub use bigm::{big_m_feature, big_m_score, split_big_m, split_big_m_tightened, BigMBundle, SplitBigM};
pub use builder::{build_cesep, build_colce_atm, build_colce_lr, build_collective};
pub use extract::extract_solution;
pub use lp_format::write_lp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

impl VarKind {
    pub fn is_integral(self) -> bool {
        self != VarKind::Continuous
    }
}

/// What a variable encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarTag {
    /// Counterfactual coordinate `x[i][j]`.
    X { instance: usize, feature: usize },
    /// Product of the selection flag and the linear score of instance `i`.
    ScoreProduct { instance: usize },
    /// `xi[i][j]`: coordinate `(i, j)` may change.
    Change { instance: usize, feature: usize },
    /// `xi*[j]`: feature `j` may change for some instance.
    GlobalChange { feature: usize },
    /// `y[i]`: instance `i` must be classified positive.
    Select { instance: usize },
    /// `z[i][l][t]`: counterfactual `i` ends in leaf `l` of tree `t`.
    Leaf { instance: usize, tree: usize, leaf: usize },
    /// Product of `y[i]` and `z[i][l][t]` for a positive leaf.
    LeafVote { instance: usize, tree: usize, leaf: usize },
}

impl VarTag {
    /// Branching class; lower classes are branched on first.
    pub fn branch_priority(self) -> u8 {
        match self {
            VarTag::GlobalChange { .. } => 0,
            VarTag::Leaf { .. } => 1,
            VarTag::Select { .. } => 2,
            VarTag::X { .. } => 3,
            VarTag::Change { .. } => 4,
            VarTag::LeafVote { .. } | VarTag::ScoreProduct { .. } => 5,
        }
    }
}

impl fmt::Display for VarTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            VarTag::X { instance, feature } => write!(f, "x_{instance}_{feature}"),
            VarTag::ScoreProduct { instance } => write!(f, "u_{instance}"),
            VarTag::Change { instance, feature } => write!(f, "xi_{instance}_{feature}"),
            VarTag::GlobalChange { feature } => write!(f, "xig_{feature}"),
            VarTag::Select { instance } => write!(f, "y_{instance}"),
            VarTag::Leaf { instance, tree, leaf } => write!(f, "z_{instance}_{tree}_{leaf}"),
            VarTag::LeafVote { instance, tree, leaf } => write!(f, "v_{instance}_{tree}_{leaf}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable<T> {
    pub tag: VarTag,
    pub kind: VarKind,
    pub lower: T,
    pub upper: T,
}

/// Tagged variables with dense indices from 0.
#[derive(Clone, Debug, Default)]
pub struct VariableSpace<T> {
    vars: Vec<Variable<T>>,
    index: HashMap<VarTag, usize>,
}

impl<T: Scalar> VariableSpace<T> {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, tag: VarTag, kind: VarKind, lower: T, upper: T) -> Result<usize> {
        if self.index.contains_key(&tag) {
            return Err(Error::Argument(format!("variable {tag} declared twice")));
        }
        if lower > upper {
            return Err(Error::Argument(format!("variable {tag} has empty box [{lower}, {upper}]")));
        }
        let idx = self.vars.len();
        self.vars.push(Variable {
            tag,
            kind,
            lower,
            upper,
        });
        self.index.insert(tag, idx);
        Ok(idx)
    }

    pub fn index_of(&self, tag: VarTag) -> Option<usize> {
        self.index.get(&tag).copied()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Variable<T> {
        &self.vars[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Variable<T>> {
        self.vars.iter()
    }

    pub fn lower_bounds(&self) -> Vec<T> {
        self.vars.iter().map(|v| v.lower).collect()
    }

    pub fn upper_bounds(&self) -> Vec<T> {
        self.vars.iter().map(|v| v.upper).collect()
    }

    pub fn integral_indices(&self) -> Vec<usize> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.kind.is_integral().then_some(k))
            .collect()
    }

    pub fn count_kind(&self, kind: VarKind) -> usize {
        self.vars.iter().filter(|v| v.kind == kind).count()
    }
}

/// What a row encodes; used by audits and the LP export.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowRole {
    /// `|x0 - x| <= M xi` (one side per row).
    ChangeIndicator,
    /// `xi* >= xi`.
    GlobalLink,
    /// `sum y = I*`.
    Cardinality,
    /// `sum xi* <= F_max`.
    FeatureBudget,
    /// Linear-score product rows for `u = y (w.x + b)` and `u >= nu y`.
    ScoreProduct,
    /// Left branch condition of a leaf path.
    SplitLeft,
    /// Right branch condition of a leaf path.
    SplitRight,
    /// Exactly one leaf per tree.
    OneLeaf,
    /// `v = y z` product rows.
    LeafVote,
    /// Weighted vote of positive leaves reaches `nu y`.
    EnsembleScore,
    /// Dummies of a one-hot group sum to one.
    OneHot,
    /// User-supplied linking row.
    Linking,
    /// Valid inequality implied by the rows above; tightens relaxations.
    Implied,
}

/// A binary that switches a big-M row off when it takes `relaxed_at`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Indicator<T> {
    pub var: usize,
    pub relaxed_at: T,
    pub big_m: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row<T> {
    pub coeffs: Vec<(usize, T)>,
    pub sense: Sense,
    pub rhs: T,
    pub role: RowRole,
    pub indicator: Option<Indicator<T>>,
}

impl<T: Scalar> Row<T> {
    pub fn activity(&self, values: &[T]) -> T {
        self.coeffs.iter().map(|&(k, a)| a * values[k]).sum()
    }

    pub fn violation(&self, values: &[T]) -> T {
        self.sense.violation(self.activity(values), self.rhs)
    }
}

/// `sum_v q_v v^2 + c_v v + constant` with `q_v >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective<T> {
    pub quadratic: Vec<T>,
    pub linear: Vec<T>,
    pub constant: T,
}

impl<T: Scalar> Objective<T> {
    pub fn value(&self, v: &[T]) -> T {
        let body: T = self
            .quadratic
            .iter()
            .zip(&self.linear)
            .zip(v)
            .map(|((&q, &c), &x)| q * x * x + c * x)
            .sum();
        body + self.constant
    }
}

/// Context a problem was built from; needed to decode solutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemMeta<T> {
    pub x0: Matrix<T>,
    pub row_ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub i_star: usize,
    pub cost: CostParams<T>,
    pub f_max: Option<usize>,
    pub scorer: ScorerKind,
    pub nu: T,
    /// Built for a single instance with its selection fixed.
    pub single: bool,
}

impl<T> ProblemMeta<T> {
    pub fn n_instances(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }
}

#[derive(Clone, Debug)]
pub struct MiqpProblem<T> {
    pub vars: VariableSpace<T>,
    pub rows: Vec<Row<T>>,
    pub objective: Objective<T>,
    pub meta: ProblemMeta<T>,
    pub big_m: BigMBundle<T>,
}

impl<T: Scalar> MiqpProblem<T> {
    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_integral(&self) -> usize {
        self.vars.integral_indices().len()
    }

    pub fn objective_value(&self, v: &[T]) -> T {
        self.objective.value(v)
    }

    /// Largest violation of any row or variable box at `v`.
    pub fn max_violation(&self, v: &[T]) -> T {
        let rows = self.rows.iter().map(|r| r.violation(v));
        let boxes = self
            .vars
            .iter()
            .zip(v)
            .map(|(var, &x)| (var.lower - x).max(x - var.upper));
        rows.chain(boxes).fold(T::zero(), T::max)
    }

    pub fn is_integral_at(&self, v: &[T], tol: T) -> bool {
        self.vars
            .iter()
            .zip(v)
            .all(|(var, &x)| !var.kind.is_integral() || (x - x.round()).abs() <= tol)
    }

    pub fn value_of(&self, v: &[T], tag: VarTag) -> Option<T> {
        self.vars.index_of(tag).map(|k| v[k])
    }

    /// Structural checks: row indices, convexity, quadratic terms on `x` only.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.objective.quadratic.len() != n || self.objective.linear.len() != n {
            return Err(Error::Dimension("objective length differs from variable count".into()));
        }
        for (k, (&q, var)) in self.objective.quadratic.iter().zip(self.vars.iter()).enumerate() {
            if q < T::zero() {
                return Err(Error::Argument(format!("negative curvature on variable {k}")));
            }
            if q > T::zero() && !matches!(var.tag, VarTag::X { .. }) {
                return Err(Error::Argument(format!("quadratic term on non-x variable {}", var.tag)));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if let Some((k, _)) = row.coeffs.iter().find(|(k, _)| *k >= n) {
                return Err(Error::Argument(format!("row {r} references undeclared variable {k}")));
            }
        }
        Ok(())
    }
}
