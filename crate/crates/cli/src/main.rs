use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use cpdsel::data::DEFAULT_BINS;
use cpdsel::em::{CvConfig, CvPredictor};
use cpdsel::experiment::DEFAULT_RANKS;
use cpdsel::knn::Metric;
use cpdsel::selection::{greedy_select_with, lazy_greedy_select_with, SelectOptions, DEFAULT_SAMPLES};
use cpdsel::verify::{verify_model, VerifyOptions};
use cpdsel::{
    build_empirical_pmf, cross_validate_rank, discretize_equal_width, em_fit, evaluate_feature_order, ingest_csv,
    remodeling_select, run_experiment, DiscreteDataset, EntropyMode, EvaluationConfig, ExperimentConfig, FitConfig,
    ModelDocument, RawTable, Schema, SelectionResult, SplitSpec, Strategy,
};

#[derive(Parser, Debug)]
#[command(name = "cpdsel", version, about = "Feature selection through a low-rank CPD model of the joint PMF")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Maximum worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run everything on one thread in a fixed order.
    #[arg(long, global = true)]
    strict_deterministic: bool,

    /// Output file for the JSON result (standard output when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Log progress to standard error (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Discretize a dataset, fit a CPD model by EM, and write the model JSON.
    Fit(FitArgs),
    /// Select K features from a fitted model (or by per-candidate refits).
    Select(SelectArgs),
    /// Score a feature order with 1-NN over Monte-Carlo train/test splits.
    Evaluate(EvaluateArgs),
    /// Pick the CPD rank by k-fold cross-validation.
    CvRank(CvRankArgs),
    /// Full split / fit / select / score experiment with a random control.
    Experiment(ExperimentArgs),
    /// Run the enumeration checks on a model file.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// JSON object mapping each column to "continuous", "categorical", or "label".
    #[arg(long)]
    schema: PathBuf,
    /// Equal-width bins for continuous columns.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Greedy,
    Lazy,
    Remodel,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Lazy => Strategy::LazyGreedy,
            StrategyArg::Remodel => Strategy::Remodeling,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EntropyArg {
    Exact,
    Mc,
    Auto,
}

impl From<EntropyArg> for EntropyMode {
    fn from(e: EntropyArg) -> Self {
        match e {
            EntropyArg::Exact => EntropyMode::Exact,
            EntropyArg::Mc => EntropyMode::MonteCarlo,
            EntropyArg::Auto => EntropyMode::Auto,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Hamming,
    Manhattan,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Hamming => Metric::Hamming,
            MetricArg::Manhattan => Metric::Manhattan,
        }
    }
}

#[derive(Args, Debug)]
struct SelectionFlags {
    #[arg(long, value_enum, default_value = "lazy")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "auto")]
    entropy: EntropyArg,
    /// Monte-Carlo sample count T.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Model JSON written by `fit` (greedy and lazy strategies).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Number of features K to select.
    #[arg(long)]
    budget: usize,
    #[command(flatten)]
    selection: SelectionFlags,
    /// Dataset for the remodel strategy.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Rank of every refit under the remodel strategy.
    #[arg(long)]
    rank: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Selection JSON written by `select`; its order is scored.
    #[arg(long, conflicts_with = "features")]
    selection: Option<PathBuf>,
    /// Comma-separated 0-based feature positions to score, in order.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<usize>>,
    /// Score only the first K features of the order.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, value_enum, default_value = "hamming")]
    metric: MetricArg,
    /// Also write the accuracy curve as TSV.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PredictorArg {
    Posterior,
    Nn,
}

#[derive(Args, Debug)]
struct CvRankArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Candidate ranks, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RANKS)]
    ranks: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, value_enum, default_value = "posterior")]
    predictor: PredictorArg,
    /// Feature budget of the nn predictor.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Largest K scored.
    #[arg(long)]
    budget: usize,
    #[command(flatten)]
    selection: SelectionFlags,
    /// Fixed rank; skips cross-validation.
    #[arg(long, conflicts_with = "ranks")]
    rank: Option<usize>,
    /// Candidate ranks for cross-validation, comma-separated.
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, value_enum, default_value = "hamming")]
    metric: MetricArg,
    /// Also write the accuracy curve as TSV.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Monte-Carlo sample count for the entropy check.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(cpdsel::Error),
    /// The command ran but its result is a failure (e.g. verification).
    Failed(String),
}

impl From<cpdsel::Error> for CliError {
    fn from(e: cpdsel::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use cpdsel::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
            CliError::Core(e) => match e.root() {
                E::InvalidArgument(_) | E::Schema(_) => 2,
                E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Failed(_) => "failed",
            CliError::Core(e) => e.root().kind(),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

struct Runtime {
    seed: u64,
    parallel: bool,
    out: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Core(e.into()))
}

impl Runtime {
    fn emit<T: Serialize>(&self, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))? + "\n";
        match &self.out {
            Some(path) => write_text(path, &text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn load_table(data: &Path, schema: &Path) -> CliResult<RawTable> {
    let schema = Schema::from_path(schema)?;
    Ok(ingest_csv(data, &schema)?)
}

fn load_dataset(args: &DataArgs) -> CliResult<DiscreteDataset> {
    let table = load_table(&args.data, &args.schema)?;
    let all: Vec<usize> = (0..table.num_rows()).collect();
    Ok(discretize_equal_width(&table, args.bins, &all)?)
}

fn require<T: Clone>(value: &Option<T>, flag: &str, why: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| CliError::Usage(format!("--{flag} is required {why}")))
}

fn cmd_fit(rt: &Runtime, args: &FitArgs) -> CliResult<()> {
    let dataset = load_dataset(&args.data)?;
    let config = FitConfig {
        max_iterations: args.max_iterations,
        relative_kl_tolerance: args.tolerance,
        parallel: rt.parallel,
        ..FitConfig::new(args.rank, rt.seed)
    };
    config.validate()?;
    let empirical = build_empirical_pmf(&dataset)?;
    info!(
        "fitting rank {} on {} samples, {} support points",
        args.rank,
        dataset.num_samples(),
        empirical.nnz()
    );
    let (model, report) = em_fit(&empirical, &config)?;
    info!(
        "{} sweeps, final KL {:?}",
        report.iterations_run,
        report.kl_trace.last()
    );
    rt.emit(&ModelDocument::from_model(&model, Some(rt.seed), Some(report)))
}

fn cmd_select(rt: &Runtime, args: &SelectArgs) -> CliResult<()> {
    let options = SelectOptions::new(args.selection.entropy.into(), args.selection.samples, rt.seed);
    let result: SelectionResult = match args.selection.strategy {
        StrategyArg::Remodel => {
            let why = "by --strategy remodel";
            let data = require(&args.data, "data", why)?;
            let schema = require(&args.schema, "schema", why)?;
            let rank = require(&args.rank, "rank", why)?;
            let dataset = load_dataset(&DataArgs {
                data,
                schema,
                bins: args.bins,
            })?;
            let fit = FitConfig {
                parallel: rt.parallel,
                ..FitConfig::new(rank, rt.seed)
            };
            remodeling_select(&dataset, args.budget, &fit, &options)?
        }
        strategy => {
            let path = require(&args.model, "model", "by the greedy and lazy strategies")?;
            let model = ModelDocument::read(&path)?.to_model()?;
            if strategy == StrategyArg::Greedy {
                greedy_select_with(&model, args.budget, &options)?
            } else {
                lazy_greedy_select_with(&model, args.budget, &options)?
            }
        }
    };
    rt.emit(&result)
}

fn cmd_evaluate(rt: &Runtime, args: &EvaluateArgs) -> CliResult<()> {
    let mut order = match (&args.selection, &args.features) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Core(e.into()))?;
            let sel: SelectionResult = serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))?;
            sel.order
        }
        (None, Some(features)) => features.clone(),
        _ => return Err(CliError::Usage("one of --selection or --features is required".into())),
    };
    if let Some(k) = args.budget {
        if k == 0 || k > order.len() {
            return Err(CliError::Usage(format!("--budget {k} must be in 1..={}", order.len())));
        }
        order.truncate(k);
    }
    let table = load_table(&args.data.data, &args.data.schema)?;
    let config = EvaluationConfig {
        split: SplitSpec {
            train_fraction: args.train_fraction,
            monte_carlo_runs: args.runs,
            seed: rt.seed,
        },
        bins: args.data.bins,
        metric: args.metric.into(),
    };
    let report = evaluate_feature_order(&table, &order, &config)?;
    if let Some(path) = &args.tsv {
        write_text(path, &report.curve.to_tsv())?;
    }
    rt.emit(&report)
}

fn cmd_cv_rank(rt: &Runtime, args: &CvRankArgs) -> CliResult<()> {
    let dataset = load_dataset(&args.data)?;
    let predictor = match args.predictor {
        PredictorArg::Posterior => CvPredictor::Posterior,
        PredictorArg::Nn => CvPredictor::NearestNeighbor {
            budget: require(&args.budget, "budget", "by --predictor nn")?,
        },
    };
    let config = CvConfig {
        folds: args.folds,
        predictor,
        ..CvConfig::new(args.ranks.clone(), rt.seed)
    };
    rt.emit(&cross_validate_rank(&dataset, &config)?)
}

fn cmd_experiment(rt: &Runtime, args: &ExperimentArgs) -> CliResult<()> {
    let table = load_table(&args.data.data, &args.data.schema)?;
    let ranks = match (&args.rank, &args.ranks) {
        (Some(r), _) => vec![*r],
        (None, Some(rs)) => rs.clone(),
        (None, None) => DEFAULT_RANKS.to_vec(),
    };
    let config = ExperimentConfig {
        split: SplitSpec {
            train_fraction: args.train_fraction,
            monte_carlo_runs: args.runs,
            seed: rt.seed,
        },
        bins: args.data.bins,
        ranks,
        cv_folds: args.folds,
        strategy: args.selection.strategy.into(),
        entropy_mode: args.selection.entropy.into(),
        samples: args.selection.samples,
        metric: args.metric.into(),
        parallel: rt.parallel,
        ..ExperimentConfig::new(args.budget, rt.seed)
    };
    let report = run_experiment(&table, &config)?;
    if let Some(path) = &args.tsv {
        write_text(path, &report.to_tsv())?;
    }
    rt.emit(&report)
}

fn cmd_verify(rt: &Runtime, args: &VerifyArgs) -> CliResult<()> {
    let model = ModelDocument::read(&args.model)?.to_model_unchecked()?;
    let opts = VerifyOptions {
        samples: args.samples,
        seed: rt.seed,
        ..VerifyOptions::default()
    };
    let report = verify_model(&model, &opts)?;
    rt.emit(&report)?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(CliError::Failed(format!("verification failed: {}", failed.join(", "))))
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let threads = if cli.strict_deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let rt = Runtime {
        seed: cli.seed,
        parallel: !cli.strict_deterministic,
        out: cli.out.clone(),
    };
    match &cli.command {
        Command::Fit(a) => cmd_fit(&rt, a),
        Command::Select(a) => cmd_select(&rt, a),
        Command::Evaluate(a) => cmd_evaluate(&rt, a),
        Command::CvRank(a) => cmd_cv_rank(&rt, a),
        Command::Experiment(a) => cmd_experiment(&rt, a),
        Command::Verify(a) => cmd_verify(&rt, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let report = serde_json::json!({
                "error": {
                    "kind": e.kind(),
                    "message": e.message(),
                    "exit_code": code,
                }
            });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
