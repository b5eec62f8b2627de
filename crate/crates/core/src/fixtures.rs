//! Small reproducible classifiers for exercising the pipeline end to end:
//! full-batch logistic regression and a bagged CART forest.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::scorers::{LinearModel, TreeEnsemble, TreeNode, WeightedTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureKind {
    Logistic,
    Forest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: FixtureKind,
    pub seed: u64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::n_trees")]
    pub n_trees: usize,
    #[serde(default = "defaults::max_depth")]
    pub max_depth: usize,
    /// Share of features considered at each split.
    #[serde(default = "defaults::feature_fraction")]
    pub feature_fraction: f64,
    /// Resample rows with replacement for each tree.
    #[serde(default = "defaults::bootstrap")]
    pub bootstrap: bool,
    /// Split margin written into trained ensembles.
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub label_column: Option<String>,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        0.5
    }
    pub fn iterations() -> usize {
        2000
    }
    pub fn n_trees() -> usize {
        5
    }
    pub fn max_depth() -> usize {
        3
    }
    pub fn feature_fraction() -> f64 {
        0.6
    }
    pub fn bootstrap() -> bool {
        true
    }
    pub fn epsilon() -> f64 {
        1e-5
    }
}

impl TrainConfig {
    pub fn logistic(seed: u64) -> Self {
        Self {
            kind: FixtureKind::Logistic,
            seed,
            learning_rate: defaults::learning_rate(),
            iterations: defaults::iterations(),
            n_trees: defaults::n_trees(),
            max_depth: defaults::max_depth(),
            feature_fraction: defaults::feature_fraction(),
            bootstrap: defaults::bootstrap(),
            epsilon: defaults::epsilon(),
            label_column: None,
        }
    }

    pub fn forest(seed: u64, n_trees: usize, max_depth: usize) -> Self {
        Self {
            kind: FixtureKind::Forest,
            n_trees,
            max_depth,
            ..Self::logistic(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.n_trees == 0 || self.max_depth == 0 {
            return Err(Error::Config("iterations, tree count and depth must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "feature fraction {} outside (0, 1]",
                self.feature_fraction
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("split margin must be positive".into()));
        }
        Ok(())
    }
}

fn check_labels<T: Copy>(x: &Matrix<T>, labels: &[i8]) -> Result<()> {
    if labels.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::Argument("labels must be +1 or -1".into()));
    }
    if !(labels.contains(&1) && labels.contains(&-1)) {
        return Err(Error::Argument("training labels contain a single class".into()));
    }
    Ok(())
}

/// Full-batch gradient descent on the mean logistic loss, starting at zero.
/// The threshold of the returned model is 0.
pub fn train_logistic<T: Scalar>(x: &Matrix<T>, labels: &[i8], config: &TrainConfig) -> Result<LinearModel<T>> {
    config.validate()?;
    check_labels(x, labels)?;
    let (n, j) = x.shape();
    let inv_n = 1.0 / n as f64;
    let mut w = vec![0.0f64; j];
    let mut b = 0.0f64;
    let rows: Vec<Vec<f64>> = x.rows_iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect();
    let mut grad = vec![0.0f64; j];
    for _ in 0..config.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (row, &l) in rows.iter().zip(labels) {
            let y = f64::from(l);
            let s: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            // d/ds log(1 + exp(-y s)) = -y / (1 + exp(y s))
            let g = -y / (1.0 + (y * s).exp());
            for (gk, &xk) in grad.iter_mut().zip(row) {
                *gk += g * xk;
            }
            grad_b += g;
        }
        for (wk, gk) in w.iter_mut().zip(&grad) {
            *wk -= config.learning_rate * gk * inv_n;
        }
        b -= config.learning_rate * grad_b * inv_n;
    }
    LinearModel::new(w.into_iter().map(T::lit).collect(), T::lit(b), T::zero())
}

/// Bagged CART forest: Gini splits at midpoints between distinct values,
/// depth at most `max_depth`, a random feature subset per split. Each tree
/// has weight `1/T` and the threshold is 0.5 (majority vote).
pub fn train_forest<T: Scalar>(x: &Matrix<T>, labels: &[i8], config: &TrainConfig) -> Result<TreeEnsemble<T>> {
    config.validate()?;
    check_labels(x, labels)?;
    let (n, j) = x.shape();
    let data: Vec<Vec<f64>> = x.rows_iter().map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect();
    let per_split = ((config.feature_fraction * j as f64).ceil() as usize).clamp(1, j);
    let weight = T::one() / T::from_usize_lossy(config.n_trees);
    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(t as u64));
        let rows: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let cart = Cart {
            data: &data,
            labels,
            max_depth: config.max_depth,
            per_split,
        };
        let root = cart.grow(&rows, 0, &mut rng).with_numbered_leaves();
        trees.push(WeightedTree { weight, root });
    }
    TreeEnsemble::new(trees, T::lit(0.5), T::lit(config.epsilon))
}

struct Cart<'a> {
    data: &'a [Vec<f64>],
    labels: &'a [i8],
    max_depth: usize,
    per_split: usize,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

impl Cart<'_> {
    fn majority<T: Scalar>(&self, rows: &[usize]) -> TreeNode<T> {
        let pos = rows.iter().filter(|&&r| self.labels[r] == 1).count();
        TreeNode::leaf(if 2 * pos >= rows.len() { 1 } else { -1 })
    }

    fn grow<T: Scalar>(&self, rows: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> TreeNode<T> {
        let pos = rows.iter().filter(|&&r| self.labels[r] == 1).count();
        if depth >= self.max_depth || pos == 0 || pos == rows.len() || rows.len() < 2 {
            return self.majority(rows);
        }
        let j = self.data[0].len();
        let mut features: Vec<usize> = sample(rng, j, self.per_split).into_vec();
        features.sort_unstable();
        let parent = gini(pos, rows.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let mut sorted: Vec<(f64, i8)> = rows.iter().map(|&r| (self.data[r][f], self.labels[r])).collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 1..sorted.len() {
                if sorted[k - 1].1 == 1 {
                    left_pos += 1;
                }
                if sorted[k].0 <= sorted[k - 1].0 {
                    continue;
                }
                let (nl, nr) = (k, sorted.len() - k);
                let impurity = (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(pos - left_pos, nr))
                    / sorted.len() as f64;
                let threshold = 0.5 * (sorted[k - 1].0 + sorted[k].0);
                if best.is_none_or(|(b, _, _)| impurity < b - 1e-12) {
                    best = Some((impurity, f, threshold));
                }
            }
        }
        let Some((impurity, feature, threshold)) = best else {
            return self.majority(rows);
        };
        if impurity >= parent - 1e-12 {
            return self.majority(rows);
        }
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.data[r][feature] <= threshold);
        TreeNode::split(
            feature,
            T::lit(threshold),
            self.grow(&left, depth + 1, rng),
            self.grow(&right, depth + 1, rng),
        )
    }
}
