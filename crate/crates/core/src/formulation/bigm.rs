use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::scorers::LinearModel;

/// Big-M constants used by one compiled problem.
#[derive(Clone, Debug, PartialEq)]
pub struct BigMBundle<T> {
    /// Per `(instance, feature)` change indicator constant.
    pub feature: Matrix<T>,
    /// Per-instance score bound (linear scorers only, empty otherwise).
    pub score: Vec<T>,
    /// One entry per split node of every tree (ensembles only).
    pub splits: Vec<SplitBigM<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitBigM<T> {
    pub tree: usize,
    pub feature: usize,
    pub threshold: T,
    pub epsilon: T,
    /// Constant of the left-branch row `x - M1 (1 - z) + eps <= c`.
    pub left: T,
    /// Constant of the right-branch row `x + M2 (1 - z) - eps >= c`.
    pub right: T,
}

fn finite_box<T: Scalar>(lower: T, upper: T, what: &str) -> Result<()> {
    if lower.is_finite() && upper.is_finite() {
        Ok(())
    } else {
        Err(Error::Unbounded {
            feature: what.to_string(),
        })
    }
}

/// `|x0| + max(|lb|, |ub|)`: bounds `|x0 - x|` for every `x` in the box.
pub fn big_m_feature<T: Scalar>(x0: T, lower: T, upper: T) -> Result<T> {
    finite_box(lower, upper, "change indicator")?;
    Ok(x0.abs() + lower.abs().max(upper.abs()))
}

/// `|b| + |w|_2 * max_{z in box} |z|_2`: bounds `|w.x + b|` over the box.
pub fn big_m_score<T: Scalar>(model: &LinearModel<T>, lower: &[T], upper: &[T]) -> Result<T> {
    if lower.len() != model.n_features() || upper.len() != model.n_features() {
        return Err(Error::Dimension("box and model lengths differ".into()));
    }
    let mut radius_sq = T::zero();
    for (&lo, &hi) in lower.iter().zip(upper) {
        finite_box(lo, hi, "score bound")?;
        radius_sq += (lo * lo).max(hi * hi);
    }
    let w_norm = model.weights.iter().map(|&w| w * w).sum::<T>().sqrt();
    Ok(model.intercept.abs() + w_norm * radius_sq.sqrt())
}

/// Per-split constants `(max(|lb|,|ub|) - c, min(|lb|,|ub|) + c + eps)`
/// exactly as the tightened closed form gives them. They are not always
/// large enough to switch a row off; [`split_big_m`] repairs that.
pub fn split_big_m_tightened<T: Scalar>(lower: T, upper: T, threshold: T, epsilon: T) -> (T, T) {
    let (a, b) = (lower.abs(), upper.abs());
    (a.max(b) - threshold, a.min(b) + threshold + epsilon)
}

/// Split constants that provably deactivate both branch rows over
/// `[lower, upper]`: the tightened values, floored at `ub - c + eps` (left)
/// and `c + eps - lb` (right), and at zero.
pub fn split_big_m<T: Scalar>(lower: T, upper: T, threshold: T, epsilon: T) -> Result<(T, T)> {
    finite_box(lower, upper, "split")?;
    let (m1, m2) = split_big_m_tightened(lower, upper, threshold, epsilon);
    let left = m1.max(upper - threshold + epsilon).max(T::zero());
    let right = m2.max(threshold + epsilon - lower).max(T::zero());
    Ok((left, right))
}
