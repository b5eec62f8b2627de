//! Collective counterfactual explanations for score-based classifiers.
//!
//! Given a group of instances, a trained classifier (a linear score or an
//! additive ensemble of decision trees) and a feasible set of perturbations,
//! the crate computes one counterfactual per selected instance so that the
//! total perturbation cost is minimal. The cost combines the squared
//! Euclidean distance, a per-instance count of changed features and a global
//! count of features changed anywhere in the group.
//!
//! The pipeline is:
//!
//! 1. [`domain`] holds instances, feature metadata and the cost function.
//! 2. [`scorers`] evaluates linear models and tree ensembles.
//! 3. [`formulation`] compiles a group + scorer into a mixed-integer convex
//!    quadratic program ([`formulation::MiqpProblem`]).
//! 4. [`solver`] solves it exactly with branch-and-bound (depth-first until
//!    an incumbent exists, best-first afterwards).
//! 5. [`analysis`] wraps everything into workflows (collective, separable,
//!    Pareto sweeps over a feature budget, outlier detection).
//!
//! [`fixtures`] trains small classifiers for end-to-end runs and [`io`]
//! covers every file format. All numerical code is generic over
//! [`Scalar`]; the `*64` aliases below fix it to `f64`.

pub mod analysis;
pub mod cli;
pub mod domain;
pub mod error;
pub mod fixtures;
pub mod formulation;
pub mod io;
pub mod matrix;
pub mod scalar;
pub mod scorers;
pub mod solver;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type InstanceGroup64 = domain::InstanceGroup<f64>;
pub type FeasibleSet64 = domain::FeasibleSet<f64>;
pub type CostParams64 = domain::CostParams<f64>;
pub type LinearModel64 = scorers::LinearModel<f64>;
pub type TreeEnsemble64 = scorers::TreeEnsemble<f64>;
pub type Scorer64 = scorers::Scorer<f64>;
pub type MiqpProblem64 = formulation::MiqpProblem<f64>;
pub type SolveResult64 = solver::SolveResult<f64>;
pub type CollectiveExplanation64 = analysis::CollectiveExplanation<f64>;
pub type ParetoPoint64 = analysis::ParetoPoint<f64>;
pub type OutlierReport64 = analysis::OutlierReport<f64>;

pub type InstanceGroup32 = domain::InstanceGroup<f32>;
pub type LinearModel32 = scorers::LinearModel<f32>;
pub type TreeEnsemble32 = scorers::TreeEnsemble<f32>;
