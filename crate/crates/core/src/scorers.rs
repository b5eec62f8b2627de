//! Score-based classifiers: an instance is positive iff its score reaches
//! the threshold `nu`.
//!
//! Trees send `x` left when `x[feature] <= threshold` and right otherwise.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub nu: T,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(weights: Vec<T>, intercept: T, nu: T) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !intercept.is_finite() || !nu.is_finite() {
            return Err(Error::Model("linear model coefficients must be finite".into()));
        }
        Ok(Self {
            weights,
            intercept,
            nu,
        })
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }
}

pub fn linear_score<T: Scalar>(model: &LinearModel<T>, x: &[T]) -> Result<T> {
    if x.len() != model.weights.len() {
        return Err(Error::Dimension(format!(
            "instance has {} features, model {}",
            x.len(),
            model.weights.len()
        )));
    }
    Ok(dot(&model.weights, x) + model.intercept)
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| u * v).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode<T> {
    Split {
        feature: usize,
        threshold: T,
        left: Box<TreeNode<T>>,
        right: Box<TreeNode<T>>,
    },
    Leaf {
        id: usize,
        /// +1 or -1.
        class: i8,
    },
}

impl<T: Scalar> TreeNode<T> {
    pub fn split(feature: usize, threshold: T, left: TreeNode<T>, right: TreeNode<T>) -> Self {
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Leaf with a placeholder id; [`TreeNode::renumber_leaves`] assigns ids.
    pub fn leaf(class: i8) -> Self {
        TreeNode::Leaf { id: 0, class }
    }

    /// Assigns leaf ids `0, 1, ...` in left-to-right order.
    pub fn renumber_leaves(&mut self) {
        fn walk<T>(node: &mut TreeNode<T>, next: &mut usize) {
            match node {
                TreeNode::Leaf { id, .. } => {
                    *id = *next;
                    *next += 1;
                }
                TreeNode::Split { left, right, .. } => {
                    walk(left, next);
                    walk(right, next);
                }
            }
        }
        let mut next = 0;
        walk(self, &mut next);
    }

    pub fn with_numbered_leaves(mut self) -> Self {
        self.renumber_leaves();
        self
    }

    /// `(leaf id, class)` for every leaf, left to right.
    pub fn leaves(&self) -> Vec<(usize, i8)> {
        let mut out = Vec::new();
        self.visit_leaves(&mut |id, class| out.push((id, class)));
        out
    }

    fn visit_leaves(&self, f: &mut impl FnMut(usize, i8)) {
        match self {
            TreeNode::Leaf { id, class } => f(*id, *class),
            TreeNode::Split { left, right, .. } => {
                left.visit_leaves(f);
                right.visit_leaves(f);
            }
        }
    }

    /// Number of splits on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature, left, right, ..
            } => Some(
                [Some(*feature), left.max_feature(), right.max_feature()]
                    .into_iter()
                    .flatten()
                    .max()
                    .unwrap_or(*feature),
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut err = None;
        self.visit_leaves(&mut |id, class| {
            if class != 1 && class != -1 {
                err.get_or_insert_with(|| format!("leaf {id} has class {class}, expected +1 or -1"));
            }
            if !ids.insert(id) {
                err.get_or_insert_with(|| format!("duplicate leaf id {id}"));
            }
        });
        if let Some(msg) = err {
            return Err(Error::Model(msg));
        }
        fn thresholds<T: Scalar>(node: &TreeNode<T>) -> bool {
            match node {
                TreeNode::Leaf { .. } => true,
                TreeNode::Split {
                    threshold, left, right, ..
                } => threshold.is_finite() && thresholds(left) && thresholds(right),
            }
        }
        if !thresholds(self) {
            return Err(Error::Model("split thresholds must be finite".into()));
        }
        Ok(())
    }

    fn class_of(&self, leaf: usize) -> Option<i8> {
        self.leaves().into_iter().find(|&(id, _)| id == leaf).map(|(_, c)| c)
    }
}

/// Id of the leaf `x` reaches.
pub fn leaf_of<T: Scalar>(tree: &TreeNode<T>, x: &[T]) -> usize {
    let mut node = tree;
    loop {
        match node {
            TreeNode::Leaf { id, .. } => return *id,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                node = if x[*feature] <= *threshold { left } else { right };
            }
        }
    }
}

fn class_reached<T: Scalar>(tree: &TreeNode<T>, x: &[T]) -> i8 {
    let mut node = tree;
    loop {
        match node {
            TreeNode::Leaf { class, .. } => return *class,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                node = if x[*feature] <= *threshold { left } else { right };
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCondition<T> {
    pub feature: usize,
    pub threshold: T,
}

/// Splits on the path to a leaf, split by the branch the path takes.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PathSplits<T> {
    /// Condition `x[feature] <= threshold` holds.
    pub left: Vec<SplitCondition<T>>,
    /// Condition `x[feature] > threshold` holds.
    pub right: Vec<SplitCondition<T>>,
}

pub fn ancestor_splits<T: Scalar>(tree: &TreeNode<T>, leaf: usize) -> Result<PathSplits<T>> {
    fn walk<T: Scalar>(node: &TreeNode<T>, leaf: usize, path: &mut PathSplits<T>) -> bool {
        match node {
            TreeNode::Leaf { id, .. } => *id == leaf,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let cond = SplitCondition {
                    feature: *feature,
                    threshold: *threshold,
                };
                path.left.push(cond);
                if walk(left, leaf, path) {
                    return true;
                }
                path.left.pop();
                path.right.push(cond);
                if walk(right, leaf, path) {
                    return true;
                }
                path.right.pop();
                false
            }
        }
    }
    let mut path = PathSplits {
        left: Vec::new(),
        right: Vec::new(),
    };
    if walk(tree, leaf, &mut path) {
        Ok(path)
    } else {
        Err(Error::Argument(format!("unknown leaf id {leaf}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTree<T> {
    pub weight: T,
    pub root: TreeNode<T>,
}

/// Additive tree model: the score is the total weight of trees whose
/// reached leaf votes +1.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnsemble<T> {
    pub trees: Vec<WeightedTree<T>>,
    pub nu: T,
    /// Margin that turns strict split inequalities into non-strict ones.
    pub epsilon: T,
}

impl<T: Scalar> TreeEnsemble<T> {
    pub fn new(trees: Vec<WeightedTree<T>>, nu: T, epsilon: T) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Model("ensemble needs at least one tree".into()));
        }
        for (t, tree) in trees.iter().enumerate() {
            if !(tree.weight >= T::zero()) || !tree.weight.is_finite() {
                return Err(Error::Model(format!("tree {t} has invalid weight {}", tree.weight)));
            }
            tree.root
                .validate()
                .map_err(|e| Error::Model(format!("tree {t}: {e}")))?;
        }
        if !(epsilon > T::zero()) || !nu.is_finite() {
            return Err(Error::Model(format!(
                "split margin must be positive and threshold finite (epsilon {epsilon}, nu {nu})"
            )));
        }
        Ok(Self { trees, nu, epsilon })
    }

    pub fn total_weight(&self) -> T {
        self.trees.iter().map(|t| t.weight).sum()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.trees.iter().filter_map(|t| t.root.max_feature()).max()
    }

    pub fn depth(&self) -> usize {
        self.trees.iter().map(|t| t.root.depth()).max().unwrap_or(0)
    }

    pub fn leaf_class(&self, tree: usize, leaf: usize) -> Option<i8> {
        self.trees[tree].root.class_of(leaf)
    }
}

pub fn ensemble_score<T: Scalar>(ens: &TreeEnsemble<T>, x: &[T]) -> T {
    ens.trees
        .iter()
        .filter(|t| class_reached(&t.root, x) == 1)
        .map(|t| t.weight)
        .sum()
}

/// +1 iff `score >= nu`.
pub fn predict<T: Scalar>(score: T, nu: T) -> i8 {
    if score >= nu {
        1
    } else {
        -1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scorer<T> {
    Linear(LinearModel<T>),
    Ensemble(TreeEnsemble<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Linear,
    Ensemble,
}

impl<T: Scalar> Scorer<T> {
    pub fn kind(&self) -> ScorerKind {
        match self {
            Scorer::Linear(_) => ScorerKind::Linear,
            Scorer::Ensemble(_) => ScorerKind::Ensemble,
        }
    }

    /// Score of `x`. Panics on a length mismatch for linear models; use
    /// [`linear_score`] for a checked call.
    pub fn score(&self, x: &[T]) -> T {
        match self {
            Scorer::Linear(m) => linear_score(m, x).expect("instance length matches model"),
            Scorer::Ensemble(e) => ensemble_score(e, x),
        }
    }

    pub fn nu(&self) -> T {
        match self {
            Scorer::Linear(m) => m.nu,
            Scorer::Ensemble(e) => e.nu,
        }
    }

    pub fn with_nu(mut self, nu: T) -> Self {
        match &mut self {
            Scorer::Linear(m) => m.nu = nu,
            Scorer::Ensemble(e) => e.nu = nu,
        }
        self
    }

    pub fn predict(&self, x: &[T]) -> i8 {
        predict(self.score(x), self.nu())
    }

    /// Checks the scorer only references features `< n_features`.
    pub fn check_features(&self, n_features: usize) -> Result<()> {
        match self {
            Scorer::Linear(m) if m.n_features() != n_features => Err(Error::Dimension(format!(
                "linear model has {} weights for {n_features} features",
                m.n_features()
            ))),
            Scorer::Ensemble(e) => match e.max_feature() {
                Some(f) if f >= n_features => Err(Error::Model(format!(
                    "tree references feature {f} but only {n_features} exist"
                ))),
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }
}
