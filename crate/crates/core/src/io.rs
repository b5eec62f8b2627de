//! File formats: dataset CSV + feature-spec sidecar, model JSON, run
//! configuration, and result emission (CSV, JSON summary, SVG heatmap).
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! value read back parses to the identical float.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{CollectiveExplanation, OutlierReport, ParetoPoint};
use crate::domain::{FeasibleSet, FeatureKind, FeatureSpec, InstanceGroup, LinkingRow, Sense};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::scorers::{LinearModel, Scorer, TreeEnsemble, TreeNode, WeightedTree};
use crate::solver::{SolveStatus, SolverOptions};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_json<D: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<D> {
    serde_json::from_str(text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

fn csv_error(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Dataset

/// A bound in the feature spec: a number, or `"auto"` for the column
/// minimum / maximum. An absent bound also means `"auto"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    Value(f64),
    Keyword(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureEntry {
    pub name: String,
    #[serde(default = "continuous")]
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<BoundSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<BoundSpec>,
    #[serde(default)]
    pub immutable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_hot_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_epsilon_zero: Option<bool>,
}

fn continuous() -> FeatureKind {
    FeatureKind::Continuous
}

/// Linear row over the stacked counterfactual vector; `coefficients` holds
/// `[index, value]` pairs with index `i * J + j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkingEntry {
    pub coefficients: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Feature-spec sidecar of a dataset CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    pub features: Vec<FeatureEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub linking: Vec<LinkingEntry>,
}

pub fn load_dataset_spec(path: &Path) -> Result<DatasetSpec> {
    parse_json(path, &read_text(path)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub group: InstanceGroup<T>,
    pub feasible: FeasibleSet<T>,
    /// +1 / -1 per row when the spec names a label column.
    pub labels: Option<Vec<i8>>,
}

impl<T: Scalar> Dataset<T> {
    /// Keeps `rows` (in the given order). Bounds stay those of the full data.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            group: self.group.select(rows)?,
            feasible: self.feasible.clone(),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect()),
        })
    }
}

fn parse_number<T: Scalar>(text: &str, row: usize, column: &str) -> Result<T> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("malformed number {text:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("non-finite value {text:?}"),
        });
    }
    Ok(T::lit(v))
}

fn parse_label(text: &str, row: usize, column: &str) -> Result<i8> {
    match text.trim() {
        "1" | "+1" | "1.0" => Ok(1),
        "-1" | "-1.0" | "0" | "0.0" => Ok(-1),
        other => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("label {other:?} is not one of 1, -1, 0"),
        }),
    }
}

/// Reads a dataset. Rows are numbered from 1 in error messages (the header
/// is row 0).
pub fn load_dataset<T: Scalar>(csv_path: &Path, spec_path: &Path) -> Result<Dataset<T>> {
    let spec = load_dataset_spec(spec_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| csv_error(csv_path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(csv_path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    dataset_from_records(&spec, &headers, reader.records().map(|r| r.map_err(|e| csv_error(csv_path, e))))
}

fn dataset_from_records<T: Scalar>(
    spec: &DatasetSpec,
    headers: &[String],
    records: impl Iterator<Item = Result<csv::StringRecord>>,
) -> Result<Dataset<T>> {
    let j = spec.features.len();
    let feature_index: HashMap<&str, usize> =
        spec.features.iter().enumerate().map(|(k, f)| (f.name.as_str(), k)).collect();
    // column position of every feature, the id and the label
    let mut feature_col = vec![None; j];
    let (mut id_col, mut label_col) = (None, None);
    for (c, h) in headers.iter().enumerate() {
        if Some(h) == spec.id_column.as_ref() {
            id_col = Some(c);
        } else if Some(h) == spec.label_column.as_ref() {
            label_col = Some(c);
        } else if let Some(&k) = feature_index.get(h.as_str()) {
            if feature_col[k].replace(c).is_some() {
                return Err(Error::Parse {
                    row: 0,
                    column: h.clone(),
                    message: "duplicate column".into(),
                });
            }
        } else {
            return Err(Error::Parse {
                row: 0,
                column: h.clone(),
                message: "unknown column (not in the feature spec)".into(),
            });
        }
    }
    for (k, c) in feature_col.iter().enumerate() {
        if c.is_none() {
            return Err(Error::Parse {
                row: 0,
                column: spec.features[k].name.clone(),
                message: "feature column missing from the CSV".into(),
            });
        }
    }
    for (name, col) in [(&spec.id_column, id_col), (&spec.label_column, label_col)] {
        if let (Some(name), None) = (name, col) {
            return Err(Error::Parse {
                row: 0,
                column: name.clone(),
                message: "column named in the spec is missing".into(),
            });
        }
    }

    let mut data = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in records.enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("{} fields, header has {}", record.len(), headers.len()),
            });
        }
        for (k, c) in feature_col.iter().enumerate() {
            data.push(parse_number::<T>(&record[c.unwrap()], row, &spec.features[k].name)?);
        }
        ids.push(match id_col {
            Some(c) => record[c].to_string(),
            None => r.to_string(),
        });
        if let Some(c) = label_col {
            labels.push(parse_label(&record[c], row, &headers[c])?);
        }
    }
    let n = ids.len();
    if n == 0 {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: "dataset has no rows".into(),
        });
    }
    let x0 = Matrix::from_vec(n, j, data)?;
    let names = spec.features.iter().map(|f| f.name.clone()).collect();
    let group = InstanceGroup::new(x0, ids, names)?;

    let mut features = Vec::with_capacity(j);
    for (k, entry) in spec.features.iter().enumerate() {
        features.push(feature_from_entry(entry, group.x0().column(k))?);
    }
    let linking = spec
        .linking
        .iter()
        .map(|l| LinkingRow {
            coefficients: l.coefficients.iter().map(|&(k, a)| (k, T::lit(a))).collect(),
            sense: l.sense,
            rhs: T::lit(l.rhs),
        })
        .collect();
    let feasible = FeasibleSet::with_linking(features, linking)?;
    feasible.check_group(&group)?;
    Ok(Dataset {
        group,
        feasible,
        labels: label_col.map(|_| labels),
    })
}

fn resolve_bound<T: Scalar>(bound: &Option<BoundSpec>, auto: T, name: &str) -> Result<T> {
    match bound {
        None => Ok(auto),
        Some(BoundSpec::Value(v)) => Ok(T::lit(*v)),
        Some(BoundSpec::Keyword(k)) if k == "auto" => Ok(auto),
        Some(BoundSpec::Keyword(k)) => Err(Error::Spec(format!(
            "feature {name}: bound {k:?} must be a number or \"auto\""
        ))),
    }
}

fn feature_from_entry<T: Scalar>(entry: &FeatureEntry, column: impl Iterator<Item = T>) -> Result<FeatureSpec<T>> {
    let (lo, hi) = column.fold((T::infinity(), T::neg_infinity()), |(a, b), v| (a.min(v), b.max(v)));
    let (auto_lo, auto_hi) = match entry.kind {
        FeatureKind::Binary => (T::zero(), T::one()),
        _ => (lo, hi),
    };
    let mut f = FeatureSpec {
        name: entry.name.clone(),
        kind: entry.kind,
        lower: resolve_bound(&entry.lower, auto_lo, &entry.name)?,
        upper: resolve_bound(&entry.upper, auto_hi, &entry.name)?,
        immutable: entry.immutable,
        one_hot_group: None,
        split_epsilon_zero: entry.kind == FeatureKind::Binary,
    };
    if let Some(g) = &entry.one_hot_group {
        f = f.one_hot(g.clone());
    }
    if let Some(z) = entry.split_epsilon_zero {
        f.split_epsilon_zero = z;
    }
    f.validate()?;
    Ok(f)
}

// ---------------------------------------------------------------------------
// Models

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeFile {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<NodeFile>,
        right: Box<NodeFile>,
    },
    Leaf {
        leaf: i8,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    pub weight: f64,
    pub root: NodeFile,
}

/// On-disk model schema, tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelFile {
    Linear {
        weights: Vec<f64>,
        intercept: f64,
        nu: f64,
    },
    Ensemble {
        nu: f64,
        epsilon: f64,
        trees: Vec<TreeFile>,
    },
}

fn node_to_file<T: Scalar>(node: &TreeNode<T>) -> NodeFile {
    match node {
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => NodeFile::Split {
            feature: *feature,
            threshold: threshold.to_f64_lossy(),
            left: Box::new(node_to_file(left)),
            right: Box::new(node_to_file(right)),
        },
        TreeNode::Leaf { class, .. } => NodeFile::Leaf { leaf: *class },
    }
}

fn node_from_file<T: Scalar>(node: &NodeFile) -> TreeNode<T> {
    match node {
        NodeFile::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::split(*feature, T::lit(*threshold), node_from_file(left), node_from_file(right)),
        NodeFile::Leaf { leaf } => TreeNode::leaf(*leaf),
    }
}

impl ModelFile {
    pub fn from_scorer<T: Scalar>(scorer: &Scorer<T>) -> Self {
        match scorer {
            Scorer::Linear(m) => ModelFile::Linear {
                weights: m.weights.iter().map(|w| w.to_f64_lossy()).collect(),
                intercept: m.intercept.to_f64_lossy(),
                nu: m.nu.to_f64_lossy(),
            },
            Scorer::Ensemble(e) => ModelFile::Ensemble {
                nu: e.nu.to_f64_lossy(),
                epsilon: e.epsilon.to_f64_lossy(),
                trees: e
                    .trees
                    .iter()
                    .map(|t| TreeFile {
                        weight: t.weight.to_f64_lossy(),
                        root: node_to_file(&t.root),
                    })
                    .collect(),
            },
        }
    }

    pub fn to_scorer<T: Scalar>(&self) -> Result<Scorer<T>> {
        match self {
            ModelFile::Linear { weights, intercept, nu } => Ok(Scorer::Linear(LinearModel::new(
                weights.iter().map(|&w| T::lit(w)).collect(),
                T::lit(*intercept),
                T::lit(*nu),
            )?)),
            ModelFile::Ensemble { nu, epsilon, trees } => {
                let trees = trees
                    .iter()
                    .map(|t| WeightedTree {
                        weight: T::lit(t.weight),
                        root: node_from_file::<T>(&t.root).with_numbered_leaves(),
                    })
                    .collect();
                Ok(Scorer::Ensemble(TreeEnsemble::new(trees, T::lit(*nu), T::lit(*epsilon))?))
            }
        }
    }
}

pub fn model_to_json<T: Scalar>(scorer: &Scorer<T>) -> String {
    let mut s = serde_json::to_string_pretty(&ModelFile::from_scorer(scorer)).expect("model serializes");
    s.push('\n');
    s
}

/// Parses a model and checks its feature indices against `n_features`.
pub fn model_from_json<T: Scalar>(text: &str, n_features: Option<usize>) -> Result<Scorer<T>> {
    let file: ModelFile = serde_json::from_str(text).map_err(|source| Error::Json {
        path: "<model>".into(),
        source,
    })?;
    let scorer = file.to_scorer()?;
    if let Some(j) = n_features {
        scorer.check_features(j)?;
    }
    Ok(scorer)
}

pub fn load_model<T: Scalar>(path: &Path, n_features: Option<usize>) -> Result<Scorer<T>> {
    let text = read_text(path)?;
    let file: ModelFile = parse_json(path, &text)?;
    let scorer = file.to_scorer()?;
    if let Some(j) = n_features {
        scorer.check_features(j)?;
    }
    Ok(scorer)
}

pub fn save_model<T: Scalar>(scorer: &Scorer<T>, path: &Path) -> Result<()> {
    write_text(path, &model_to_json(scorer))
}

// ---------------------------------------------------------------------------
// Run configuration

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Collective,
    Separable,
    Pareto,
    Outliers,
}

/// Which dataset rows form the group.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceFilter {
    #[default]
    All,
    /// Rows the scorer classifies negative (and labelled negative when the
    /// dataset has labels).
    AllNegative,
    /// Rows with these ids, in the given order.
    Ids(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub mode: Mode,
    pub lambda_ind: f64,
    pub lambda_glob: f64,
    pub tau: f64,
    pub f_range: Option<Vec<usize>>,
    pub f_max: Option<usize>,
    pub fraction: Option<f64>,
    pub i_star: Option<usize>,
    pub nu: Option<f64>,
    pub filter: InstanceFilter,
    /// Keep only the first `max_instances` rows after filtering.
    pub max_instances: Option<usize>,
    pub solver: SolverOptions,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            features: None,
            model: None,
            mode: Mode::Collective,
            lambda_ind: 0.0,
            lambda_glob: 0.0,
            tau: 1e-6,
            f_range: None,
            f_max: None,
            fraction: None,
            i_star: None,
            nu: None,
            filter: InstanceFilter::All,
            max_instances: None,
            solver: SolverOptions::default(),
            output: None,
        }
    }
}

impl RunConfig {
    /// Reads a config; relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = parse_json(path, &read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.features, &mut cfg.model, &mut cfg.output]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks the fields the mode needs and the mutually exclusive ones.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_ind", self.lambda_ind), ("lambda_glob", self.lambda_glob)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if self.dataset.is_none() || self.features.is_none() || self.model.is_none() {
            return Err(Error::Config("dataset, features and model paths are required".into()));
        }
        if self.f_max.is_some() && self.lambda_glob > 0.0 {
            return Err(Error::Config(
                "f_max and lambda_glob > 0 are mutually exclusive".into(),
            ));
        }
        if self.f_max.is_some() && self.lambda_ind > 0.0 {
            return Err(Error::Config("budgeted runs use the purely quadratic objective; set lambda_ind to 0".into()));
        }
        match self.mode {
            Mode::Pareto => {
                if self.f_range.as_ref().is_none_or(Vec::is_empty) {
                    return Err(Error::Config("pareto mode requires a non-empty f_range".into()));
                }
                if self.lambda_glob > 0.0 || self.lambda_ind > 0.0 {
                    return Err(Error::Config("pareto mode uses the purely quadratic objective".into()));
                }
            }
            Mode::Separable => {
                if self.lambda_glob > 0.0 || self.f_max.is_some() {
                    return Err(Error::Config(
                        "separable mode has no global term: lambda_glob and f_max must be unset".into(),
                    ));
                }
            }
            Mode::Outliers => {
                if self.i_star.is_some() {
                    return Err(Error::Config("outliers mode derives I* from fraction".into()));
                }
                if let Some(f) = self.fraction {
                    if !(f > 0.0 && f <= 1.0) {
                        return Err(Error::Config(format!("fraction {f} outside (0, 1]")));
                    }
                }
            }
            Mode::Collective => {}
        }
        if self.fraction.is_some() && self.mode != Mode::Outliers {
            return Err(Error::Config("fraction only applies to outliers mode".into()));
        }
        self.solver.validate()
    }

    /// Fraction used in outliers mode (0.95 when unset).
    pub fn outlier_fraction(&self) -> f64 {
        self.fraction.unwrap_or(0.95)
    }
}

// ---------------------------------------------------------------------------
// Results

/// Anything `save_results` can write.
#[derive(Clone, Debug)]
pub enum RunOutput<T> {
    Explanation(CollectiveExplanation<T>),
    Pareto(Vec<ParetoPoint<T>>),
    Outliers(OutlierReport<T>),
}

impl<T: Scalar> RunOutput<T> {
    /// Status driving the exit code: a sweep succeeds as a whole even with
    /// infeasible points, unless some point hit a limit.
    pub fn status(&self) -> SolveStatus {
        match self {
            RunOutput::Explanation(e) => e.status,
            RunOutput::Outliers(r) => r.explanation.status,
            RunOutput::Pareto(points) => points
                .iter()
                .map(|p| p.status)
                .find(|s| s.is_limit())
                .unwrap_or(SolveStatus::Optimal),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSummary {
    pub quadratic: f64,
    pub individual_l0: f64,
    pub global_l0: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub id: String,
    pub selected: bool,
    pub cost: f64,
    pub changed: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSummary {
    pub status: SolveStatus,
    pub i_star: usize,
    pub f_max: Option<usize>,
    pub lambda_ind: f64,
    pub lambda_glob: f64,
    pub tau: f64,
    pub objective: Option<ObjectiveSummary>,
    pub global_changed: Vec<String>,
    pub instances: Vec<InstanceSummary>,
    pub nodes: u64,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub f_max: usize,
    pub status: SolveStatus,
    pub quadratic_cost: Option<f64>,
    pub changed: Vec<String>,
}

/// Top-level `summary.json`. Wall-clock times are left out so that repeated
/// runs produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summary {
    Explanation(ExplanationSummary),
    Pareto {
        features: Vec<String>,
        points: Vec<ParetoEntry>,
    },
    Outliers {
        fraction: f64,
        i_star: usize,
        excluded: Vec<String>,
        explanation: ExplanationSummary,
    },
}

fn names_of(names: &[String], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&j| names[j].clone()).collect()
}

pub fn explanation_summary<T: Scalar>(e: &CollectiveExplanation<T>) -> ExplanationSummary {
    let changes = e.changes.as_ref();
    let instances = (0..e.row_ids.len())
        .map(|i| InstanceSummary {
            id: e.row_ids[i].clone(),
            selected: e.selected.get(i).copied().unwrap_or(false),
            cost: e.instance_costs.get(i).map_or(0.0, |c| c.to_f64_lossy()),
            changed: changes.map_or_else(Vec::new, |c| {
                (0..e.feature_names.len())
                    .filter(|&j| c.per_instance.get(i, j))
                    .map(|j| e.feature_names[j].clone())
                    .collect()
            }),
        })
        .collect();
    ExplanationSummary {
        status: e.status,
        i_star: e.i_star,
        f_max: e.f_max,
        lambda_ind: e.cost.lambda_ind.to_f64_lossy(),
        lambda_glob: e.cost.lambda_glob.to_f64_lossy(),
        tau: e.cost.tau.to_f64_lossy(),
        objective: e.objective.as_ref().map(|o| ObjectiveSummary {
            quadratic: o.quadratic.to_f64_lossy(),
            individual_l0: o.individual_l0.to_f64_lossy(),
            global_l0: o.global_l0.to_f64_lossy(),
            total: o.total.to_f64_lossy(),
        }),
        global_changed: names_of(&e.feature_names, &e.global_changed()),
        instances,
        nodes: e.stats.nodes,
        diagnostics: e.diagnostics.clone(),
    }
}

/// Sorts ids numerically when they all parse as integers, else as strings.
pub fn sort_ids(ids: &mut [String]) {
    let numeric: Option<Vec<i64>> = ids.iter().map(|s| s.parse().ok()).collect();
    match numeric {
        Some(_) => ids.sort_by_key(|s| s.parse::<i64>().unwrap_or_default()),
        None => ids.sort(),
    }
}

pub fn summarize<T: Scalar>(output: &RunOutput<T>) -> Summary {
    match output {
        RunOutput::Explanation(e) => Summary::Explanation(explanation_summary(e)),
        RunOutput::Pareto(points) => Summary::Pareto {
            features: points
                .first()
                .map_or_else(Vec::new, |p| p.explanation.feature_names.clone()),
            points: points
                .iter()
                .map(|p| ParetoEntry {
                    f_max: p.f_max,
                    status: p.status,
                    quadratic_cost: p.quadratic_cost.map(|c| c.to_f64_lossy()),
                    changed: names_of(&p.explanation.feature_names, &p.changed_features),
                })
                .collect(),
        },
        RunOutput::Outliers(r) => {
            let mut excluded = r.excluded.clone();
            sort_ids(&mut excluded);
            Summary::Outliers {
                fraction: r.fraction.to_f64_lossy(),
                i_star: r.i_star,
                excluded,
                explanation: explanation_summary(&r.explanation),
            }
        }
    }
}

pub fn summary_json<T: Scalar>(output: &RunOutput<T>) -> String {
    let mut s = serde_json::to_string_pretty(&summarize(output)).expect("summary serializes");
    s.push('\n');
    s
}

fn matrix_csv<T: Scalar>(ids: &[String], names: &[String], m: &Matrix<T>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["id".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(Path::new("<buffer>"), e))?;
    for (i, row) in m.rows_iter().enumerate() {
        let mut rec = vec![ids[i].clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(Path::new("<buffer>"), e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Argument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// `counterfactuals.csv` contents (row id + one column per feature).
pub fn counterfactuals_csv<T: Scalar>(e: &CollectiveExplanation<T>) -> Result<Option<String>> {
    e.counterfactual
        .as_ref()
        .map(|x| matrix_csv(&e.row_ids, &e.feature_names, x))
        .transpose()
}

/// `deltas.csv` contents: `x - x0` per cell.
pub fn deltas_csv<T: Scalar>(e: &CollectiveExplanation<T>) -> Result<Option<String>> {
    e.deltas().map(|d| matrix_csv(&e.row_ids, &e.feature_names, &d)).transpose()
}

fn pareto_csv<T: Scalar>(points: &[ParetoPoint<T>]) -> String {
    let names = points.first().map_or(&[][..], |p| &p.explanation.feature_names[..]);
    let mut out = String::from("f_max,status,quadratic_cost,n_changed");
    for n in names {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for p in points {
        let cost = p.quadratic_cost.map_or(String::new(), |c| c.to_string());
        let _ = write!(out, "{},{},{},{}", p.f_max, p.status.as_str(), cost, p.changed_features.len());
        for j in 0..names.len() {
            out.push_str(if p.changed_features.contains(&j) { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

fn mix(a: (u8, u8, u8), b: (u8, u8, u8), t: f64) -> String {
    let ch = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(a.0, b.0), ch(a.1, b.1), ch(a.2, b.2))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Static SVG heatmap of the deltas: one row per instance, one column per
/// feature, blue for decreases, red for increases, white at zero.
pub fn heatmap_svg<T: Scalar>(e: &CollectiveExplanation<T>) -> Option<String> {
    let d = e.deltas()?;
    let (n, j) = d.shape();
    let scale = d.as_slice().iter().fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs()));
    let (cell, left, top) = (24usize, 90usize, 70usize);
    let (width, height) = (left + j * cell + 20, top + n * cell + 20);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (k, name) in e.feature_names.iter().enumerate() {
        let x = left + k * cell + cell / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{}</text>"#,
            top - 6,
            top - 6,
            xml_escape(name)
        );
    }
    let white = (255, 255, 255);
    for i in 0..n {
        let y = top + i * cell;
        let mark = if e.selected.get(i).copied().unwrap_or(false) { "" } else { " (out)" };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}{}</text>"#,
            left - 4,
            y + cell / 2 + 3,
            xml_escape(&e.row_ids[i]),
            mark
        );
        for k in 0..j {
            let v = d.get(i, k).to_f64_lossy();
            let t = if scale > 0.0 { (v.abs() / scale).min(1.0) } else { 0.0 };
            let fill = if v < 0.0 {
                mix(white, (33, 102, 172), t)
            } else {
                mix(white, (178, 24, 43), t)
            };
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#dddddd"/>"##,
                left + k * cell
            );
        }
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn save_explanation<T: Scalar>(e: &CollectiveExplanation<T>, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let files = [
        ("counterfactuals.csv", counterfactuals_csv(e)?),
        ("deltas.csv", deltas_csv(e)?),
        ("heatmap.svg", heatmap_svg(e)),
    ];
    for (name, text) in files {
        if let Some(text) = text {
            let p = dir.join(name);
            write_text(&p, &text)?;
            written.push(p);
        }
    }
    Ok(())
}

/// Writes every result file into `dir` (created if needed) and returns the
/// paths written. Sweeps put each feasible point's files into `f_max_<k>/`.
pub fn save_results<T: Scalar>(output: &RunOutput<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    match output {
        RunOutput::Explanation(e) => save_explanation(e, dir, &mut written)?,
        RunOutput::Outliers(r) => save_explanation(&r.explanation, dir, &mut written)?,
        RunOutput::Pareto(points) => {
            let p = dir.join("pareto.csv");
            write_text(&p, &pareto_csv(points))?;
            written.push(p);
            for point in points.iter().filter(|p| p.explanation.has_solution()) {
                let sub = dir.join(format!("f_max_{}", point.f_max));
                fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
                save_explanation(&point.explanation, &sub, &mut written)?;
            }
        }
    }
    let p = dir.join("summary.json");
    write_text(&p, &summary_json(output))?;
    written.push(p);
    Ok(written)
}

/// A matrix file written by [`save_results`] (`counterfactuals.csv` or
/// `deltas.csv`).
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedMatrix<T> {
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub values: Matrix<T>,
}

pub fn load_counterfactuals<T: Scalar>(path: &Path) -> Result<LoadedMatrix<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.first().map(String::as_str) != Some("id") || headers.len() < 2 {
        return Err(Error::Parse {
            row: 0,
            column: headers.first().cloned().unwrap_or_default(),
            message: "expected an id column followed by feature columns".into(),
        });
    }
    let names = headers[1..].to_vec();
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        ids.push(rec[0].to_string());
        for (k, name) in names.iter().enumerate() {
            data.push(parse_number::<T>(&rec[k + 1], r + 1, name)?);
        }
    }
    let values = Matrix::from_vec(ids.len(), names.len(), data)?;
    Ok(LoadedMatrix {
        ids,
        feature_names: names,
        values,
    })
}

pub fn load_summary(path: &Path) -> Result<Summary> {
    parse_json(path, &read_text(path)?)
}

/// Ids of the selected rows recorded in a summary (all rows for sweeps).
pub fn selected_ids(summary: &Summary) -> Option<Vec<String>> {
    let e = match summary {
        Summary::Explanation(e) => e,
        Summary::Outliers { explanation, .. } => explanation,
        Summary::Pareto { .. } => return None,
    };
    Some(e.instances.iter().filter(|i| i.selected).map(|i| i.id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> DatasetSpec {
        serde_json::from_str(json).unwrap()
    }

    fn records(rows: &[&str]) -> Vec<Result<csv::StringRecord>> {
        rows.iter()
            .map(|r| Ok(csv::StringRecord::from(r.split(',').collect::<Vec<_>>())))
            .collect()
    }

    fn headers(h: &str) -> Vec<String> {
        h.split(',').map(str::to_string).collect()
    }

    #[test]
    fn auto_bounds_are_column_extremes() {
        let s = spec(r#"{"features":[{"name":"a"},{"name":"b","lower":"auto","upper":5}]}"#);
        let d: Dataset<f64> =
            dataset_from_records(&s, &headers("a,b"), records(&["1,2", "3,-1"]).into_iter()).unwrap();
        assert_eq!((d.feasible.feature(0).lower, d.feasible.feature(0).upper), (1.0, 3.0));
        assert_eq!((d.feasible.feature(1).lower, d.feasible.feature(1).upper), (-1.0, 5.0));
        assert_eq!(d.group.row_ids(), ["0", "1"]);
    }

    #[test]
    fn out_of_bounds_names_row_and_feature() {
        let s = spec(r#"{"features":[{"name":"a","lower":0,"upper":1}]}"#);
        let err = dataset_from_records::<f64>(&s, &headers("a"), records(&["0.5", "2"]).into_iter()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('a') && msg.contains('1'), "{msg}");
    }

    #[test]
    fn malformed_number_and_unknown_column() {
        let s = spec(r#"{"features":[{"name":"a"}]}"#);
        match dataset_from_records::<f64>(&s, &headers("a"), records(&["1", "x"]).into_iter()) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "a")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            dataset_from_records::<f64>(&s, &headers("a,zz"), records(&["1,2"]).into_iter()),
            Err(Error::Parse { row: 0, .. })
        ));
    }

    #[test]
    fn one_hot_row_summing_to_two_rejected() {
        let s = spec(
            r#"{"features":[{"name":"p","kind":"binary","one_hot_group":"g"},{"name":"q","kind":"binary","one_hot_group":"g"}]}"#,
        );
        assert!(dataset_from_records::<f64>(&s, &headers("p,q"), records(&["1,0", "1,1"]).into_iter()).is_err());
    }

    #[test]
    fn labels_and_ids() {
        let s = spec(r#"{"id_column":"id","label_column":"y","features":[{"name":"a"}]}"#);
        let d: Dataset<f64> =
            dataset_from_records(&s, &headers("id,a,y"), records(&["r7,1,0", "r9,2,1"]).into_iter()).unwrap();
        assert_eq!(d.labels, Some(vec![-1, 1]));
        assert_eq!(d.group.row_ids(), ["r7", "r9"]);
    }

    #[test]
    fn minimal_models_parse() {
        let lin: Scorer<f64> =
            model_from_json(r#"{"kind":"linear","weights":[1,-2],"intercept":0.5,"nu":0}"#, Some(2)).unwrap();
        assert_eq!(lin.score(&[1.0, 1.0]), -0.5);
        let ens: Scorer<f64> = model_from_json(
            r#"{"kind":"ensemble","nu":0.5,"epsilon":1e-5,"trees":[{"weight":1,"root":{"feature":0,"threshold":0.3,"left":{"leaf":-1},"right":{"leaf":1}}}]}"#,
            Some(1),
        )
        .unwrap();
        assert_eq!(ens.predict(&[0.3]), -1);
        assert_eq!(ens.predict(&[0.31]), 1);
        assert!(model_from_json::<f64>(
            r#"{"kind":"ensemble","nu":0.5,"epsilon":1e-5,"trees":[{"weight":1,"root":{"feature":2,"threshold":0.3,"left":{"leaf":-1},"right":{"leaf":1}}}]}"#,
            Some(2),
        )
        .is_err());
        assert!(model_from_json::<f64>(
            r#"{"kind":"ensemble","nu":0.5,"epsilon":1e-5,"trees":[{"weight":-1,"root":{"leaf":1}}]}"#,
            None,
        )
        .is_err());
    }

    #[test]
    fn numeric_id_sorting() {
        let mut ids = vec!["10".to_string(), "9".into(), "100".into()];
        sort_ids(&mut ids);
        assert_eq!(ids, ["9", "10", "100"]);
        let mut ids = vec!["b".to_string(), "a".into()];
        sort_ids(&mut ids);
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn config_rules() {
        let mut c = RunConfig {
            dataset: Some("d.csv".into()),
            features: Some("d.json".into()),
            model: Some("m.json".into()),
            ..RunConfig::default()
        };
        c.validate().unwrap();
        c.f_max = Some(2);
        c.lambda_glob = 0.2;
        assert!(c.validate().is_err());
        c.f_max = None;
        c.mode = Mode::Pareto;
        c.lambda_glob = 0.0;
        assert!(c.validate().is_err());
        c.f_range = Some(vec![1, 2]);
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        let ids: RunConfig = serde_json::from_str(r#"{"filter":{"ids":["1","2"]}}"#).unwrap();
        assert_eq!(ids.filter, InstanceFilter::Ids(vec!["1".into(), "2".into()]));
        let neg: RunConfig = serde_json::from_str(r#"{"filter":"all-negative"}"#).unwrap();
        assert_eq!(neg.filter, InstanceFilter::AllNegative);
    }
}
