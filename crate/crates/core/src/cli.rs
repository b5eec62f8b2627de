//! Command-line surface. Subcommands map one-to-one onto the workflows in
//! [`crate::analysis`]; every flag overrides the RunConfig field of the
//! same (snake_case) name.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    detect_outliers, explain_collective, explain_separable, explain_with_budget, pareto_sweep,
    validate_counterfactuals, CollectiveExplanation,
};
use crate::domain::CostParams;
use crate::error::{Error, Result};
use crate::fixtures::{train_forest, train_logistic, FixtureKind, TrainConfig};
use crate::io::{
    load_counterfactuals, load_dataset, load_model, load_summary, save_model, save_results,
    selected_ids, summarize, Dataset, InstanceFilter, Mode, RunConfig, RunOutput, Summary,
};
use crate::scorers::Scorer;
use crate::solver::{BranchingRule, SolveStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_LIMIT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "groupcf", version, about = "Collective counterfactual explanations")]
pub struct Cli {
    /// Increase log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collective explanation of the group.
    Explain(RunArgs),
    /// One problem per instance, cheapest I* kept.
    ExplainSep(RunArgs),
    /// Sweep the global feature budget F_max (linear models).
    Pareto(RunArgs),
    /// Explain ceil(fraction * I) instances; the rest are outliers.
    Outliers(RunArgs),
    /// Train a fixture classifier on a labelled dataset.
    TrainFixture(TrainArgs),
    /// Re-score a counterfactual CSV with a model.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterArg {
    All,
    AllNegative,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BranchingArg {
    MostFractional,
    PriorityMostFractional,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Feature-spec JSON of the dataset.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub lambda_ind: Option<f64>,
    #[arg(long)]
    pub lambda_glob: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Budgets to sweep: `a..b` (inclusive) or a comma list.
    #[arg(long)]
    pub f_range: Option<String>,
    #[arg(long)]
    pub f_max: Option<usize>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub i_star: Option<usize>,
    /// Override the model threshold.
    #[arg(long, allow_hyphen_values = true)]
    pub nu: Option<f64>,
    #[arg(long, value_enum, conflicts_with = "ids")]
    pub filter: Option<FilterArg>,
    /// Explain exactly these row ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<String>>,
    #[arg(long)]
    pub max_instances: Option<usize>,
    #[arg(long)]
    pub node_limit: Option<u64>,
    /// Seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub gap_tol: Option<f64>,
    #[arg(long, value_enum)]
    pub branching: Option<BranchingArg>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Logistic,
    Forest,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// JSON training configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub counterfactuals: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub nu: Option<f64>,
    /// summary.json of the run; only its selected rows are checked.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn parse_range(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("f_range {text:?} is not `a..b` or a comma list"));
    if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        Ok((a..=b).collect())
    } else {
        text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
    }
}

/// Merges the config file (if any) with flag overrides and the mode implied
/// by the subcommand, then validates the result.
pub fn build_config(mode: Mode, args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.mode = mode;
    macro_rules! take {
        ($($field:ident),*) => {$(
            if let Some(v) = &args.$field {
                cfg.$field = v.clone().into();
            }
        )*};
    }
    take!(dataset, features, model, output, f_max, fraction, i_star, nu, max_instances);
    if let Some(v) = args.lambda_ind {
        cfg.lambda_ind = v;
    }
    if let Some(v) = args.lambda_glob {
        cfg.lambda_glob = v;
    }
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(r) = &args.f_range {
        cfg.f_range = Some(parse_range(r)?);
    }
    match (&args.filter, &args.ids) {
        (Some(FilterArg::All), _) => cfg.filter = InstanceFilter::All,
        (Some(FilterArg::AllNegative), _) => cfg.filter = InstanceFilter::AllNegative,
        (None, Some(ids)) => cfg.filter = InstanceFilter::Ids(ids.clone()),
        (None, None) => {}
    }
    if let Some(v) = args.node_limit {
        cfg.solver.node_limit = Some(v);
    }
    if let Some(v) = args.time_limit {
        cfg.solver.time_limit_secs = Some(v);
    }
    if let Some(v) = args.gap_tol {
        cfg.solver.gap_tol = v;
    }
    if let Some(b) = args.branching {
        cfg.solver.branching = match b {
            BranchingArg::MostFractional => BranchingRule::MostFractional,
            BranchingArg::PriorityMostFractional => BranchingRule::PriorityMostFractional,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("{name} path is required")))
}

/// Loads the dataset and model of `cfg` and applies the instance filter and
/// the row cap.
pub fn prepare(cfg: &RunConfig) -> Result<(Dataset<f64>, Scorer<f64>)> {
    let data: Dataset<f64> = load_dataset(required(&cfg.dataset, "dataset")?, required(&cfg.features, "features")?)?;
    let mut scorer: Scorer<f64> = load_model(required(&cfg.model, "model")?, Some(data.group.n_features()))?;
    if let Some(nu) = cfg.nu {
        scorer = scorer.with_nu(nu);
    }
    let n = data.group.n_instances();
    let mut rows: Vec<usize> = match &cfg.filter {
        InstanceFilter::All => (0..n).collect(),
        InstanceFilter::AllNegative => (0..n)
            .filter(|&i| scorer.predict(data.group.instance(i)) < 0)
            .filter(|&i| data.labels.as_ref().is_none_or(|l| l[i] < 0))
            .collect(),
        InstanceFilter::Ids(ids) => ids
            .iter()
            .map(|id| {
                data.group
                    .row_ids()
                    .iter()
                    .position(|r| r == id)
                    .ok_or_else(|| Error::Config(format!("row id {id} not in the dataset")))
            })
            .collect::<Result<_>>()?,
    };
    if let Some(cap) = cfg.max_instances {
        rows.truncate(cap);
    }
    if rows.is_empty() {
        return Err(Error::Config("the instance filter selects no rows".into()));
    }
    Ok((data.select(&rows)?, scorer))
}

/// Runs the workflow of `cfg.mode` on prepared inputs.
pub fn execute_on(cfg: &RunConfig, data: &Dataset<f64>, scorer: &Scorer<f64>) -> Result<RunOutput<f64>> {
    let (group, fs) = (&data.group, &data.feasible);
    let n = group.n_instances();
    let i_star = cfg.i_star.unwrap_or(n);
    let opts = &cfg.solver;
    let linear = || match scorer {
        Scorer::Linear(m) => Ok(m),
        Scorer::Ensemble(_) => Err(Error::Config("this mode needs a linear model".into())),
    };
    Ok(match cfg.mode {
        Mode::Collective => RunOutput::Explanation(match cfg.f_max {
            Some(f) => explain_with_budget(group, linear()?, fs, cfg.tau, i_star, f, opts)?,
            None => {
                let cost = CostParams::with_tau(cfg.lambda_ind, cfg.lambda_glob, cfg.tau)?;
                explain_collective(group, scorer, fs, &cost, i_star, opts)?
            }
        }),
        Mode::Separable => RunOutput::Explanation(explain_separable(group, scorer, fs, cfg.lambda_ind, i_star, opts)?),
        Mode::Pareto => {
            let range = cfg.f_range.as_deref().unwrap_or_default();
            RunOutput::Pareto(pareto_sweep(group, linear()?, fs, cfg.tau, i_star, range, opts)?)
        }
        Mode::Outliers => {
            let cost = CostParams::with_tau(cfg.lambda_ind, cfg.lambda_glob, cfg.tau)?;
            RunOutput::Outliers(detect_outliers(group, scorer, fs, &cost, cfg.outlier_fraction(), opts)?)
        }
    })
}

pub fn exit_code(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Optimal => EXIT_OK,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::NodeLimit | SolveStatus::TimeLimit => EXIT_LIMIT,
    }
}

fn fmt_objective(e: &CollectiveExplanation<f64>) -> String {
    match &e.objective {
        Some(o) => format!(
            "total {:.6}  (quadratic {:.6} + individual {:.6} + global {:.6})",
            o.total, o.quadratic, o.individual_l0, o.global_l0
        ),
        None => "none".into(),
    }
}

fn print_explanation(e: &CollectiveExplanation<f64>) {
    println!("status      {}", e.status.as_str());
    println!("instances   {} (I* = {})", e.row_ids.len(), e.i_star);
    println!("objective   {}", fmt_objective(e));
    if e.has_solution() {
        let names: Vec<&str> = e.global_changed().iter().map(|&j| e.feature_names[j].as_str()).collect();
        println!("changed     {} feature(s): {}", names.len(), names.join(", "));
    }
    println!("nodes       {}  ({:.2}s)", e.stats.nodes, e.stats.wall_time_secs);
    for d in &e.diagnostics {
        println!("note        {d}");
    }
}

fn print_output(out: &RunOutput<f64>) {
    match out {
        RunOutput::Explanation(e) => print_explanation(e),
        RunOutput::Outliers(r) => {
            print_explanation(&r.explanation);
            if let Summary::Outliers { excluded, .. } = summarize(out) {
                println!("excluded    {}", excluded.join(", "));
            }
        }
        RunOutput::Pareto(points) => {
            println!("{:>5}  {:<11} {:>14}  changed", "F_max", "status", "quadratic");
            for p in points {
                let cost = p.quadratic_cost.map_or("-".into(), |c| format!("{c:.6}"));
                let names: Vec<&str> = p
                    .changed_features
                    .iter()
                    .map(|&j| p.explanation.feature_names[j].as_str())
                    .collect();
                println!("{:>5}  {:<11} {:>14}  {}", p.f_max, p.status.as_str(), cost, names.join(", "));
            }
        }
    }
}

fn run_workflow(mode: Mode, args: &RunArgs) -> Result<i32> {
    let cfg = build_config(mode, args)?;
    let (data, scorer) = prepare(&cfg)?;
    log::info!(
        "{} instances, {} features, {:?} model",
        data.group.n_instances(),
        data.group.n_features(),
        scorer.kind()
    );
    let out = execute_on(&cfg, &data, &scorer)?;
    print_output(&out);
    if let Some(dir) = &cfg.output {
        let files = save_results(&out, dir)?;
        println!("wrote       {} file(s) to {}", files.len(), dir.display());
    }
    Ok(exit_code(out.status()))
}

fn run_train(args: &TrainArgs) -> Result<i32> {
    let data: Dataset<f64> = load_dataset(&args.dataset, &args.features)?;
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("training needs a label column in the feature spec".into()))?;
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: p.display().to_string(),
                source,
            })?
        }
        None => TrainConfig::logistic(0),
    };
    if let Some(k) = args.kind {
        cfg.kind = match k {
            KindArg::Logistic => FixtureKind::Logistic,
            KindArg::Forest => FixtureKind::Forest,
        };
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.trees {
        cfg.n_trees = v;
    }
    if let Some(v) = args.depth {
        cfg.max_depth = v;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    let x = data.group.x0();
    let scorer = match cfg.kind {
        FixtureKind::Logistic => Scorer::Linear(train_logistic(x, labels, &cfg)?),
        FixtureKind::Forest => Scorer::Ensemble(train_forest(x, labels, &cfg)?),
    };
    save_model(&scorer, &args.out)?;
    let agree = x
        .rows_iter()
        .zip(labels)
        .filter(|(r, &l)| scorer.predict(r) == l)
        .count();
    println!(
        "trained {:?} model on {} rows, training accuracy {:.3}; wrote {}",
        cfg.kind,
        x.nrows(),
        agree as f64 / x.nrows() as f64,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn run_validate(args: &ValidateArgs) -> Result<i32> {
    let cf = load_counterfactuals::<f64>(&args.counterfactuals)?;
    let mut scorer: Scorer<f64> = load_model(&args.model, Some(cf.feature_names.len()))?;
    if let Some(nu) = args.nu {
        scorer = scorer.with_nu(nu);
    }
    let only = match &args.summary {
        Some(p) => selected_ids(&load_summary(p)?),
        None => None,
    };
    let report = validate_counterfactuals(&cf.ids, &cf.values, &scorer, only.as_deref())?;
    println!("checked     {} row(s) against threshold {}", report.checked, scorer.nu());
    for (id, s) in &report.violations {
        println!("VIOLATION   row {id}: score {s}");
    }
    for (id, t, f, c) in &report.fragile {
        println!(
            "warning     row {id}: margin-fragile at tree {t}, feature {} (threshold {c})",
            cf.feature_names[*f]
        );
    }
    println!("violations  {}", report.violations.len());
    Ok(if report.is_valid() { EXIT_OK } else { EXIT_INFEASIBLE })
}

/// Runs a parsed command line and returns the process exit code. Errors
/// are printed to standard error.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Explain(a) => run_workflow(Mode::Collective, a),
        Command::ExplainSep(a) => run_workflow(Mode::Separable, a),
        Command::Pareto(a) => run_workflow(Mode::Pareto, a),
        Command::Outliers(a) => run_workflow(Mode::Outliers, a),
        Command::TrainFixture(a) => run_train(a),
        Command::Validate(a) => run_validate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
