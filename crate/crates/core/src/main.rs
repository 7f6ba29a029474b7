use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use cfinfluence::harness::{
    emit_curve_data, emit_report, parse_fractions, run_experiment, score_fold, CaseStudy, DatasetSource,
    ExperimentConfig, ReportFormat, Strategy,
};
use cfinfluence::{CfMethod, Error, Result};

#[derive(Parser)]
#[command(name = "cfinfluence", version, about = "Training-sample influence on counterfactual recourse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Removal-and-retrain experiment; writes a report and pooled curves to --out.
    Run(RunArgs),
    /// Influence scores of one fold as JSON.
    Score(ScoreArgs),
    /// Load a dataset and run integrity checks.
    Validate(DataArgs),
}

#[derive(Args)]
struct DataArgs {
    /// `diabetes`, `credit` (default) or `csv:PATH`.
    #[arg(long)]
    dataset: Option<String>,
    /// Override the location of a benchmark file.
    #[arg(long)]
    data_path: Option<PathBuf>,
    /// Label column for `csv:` datasets.
    #[arg(long, default_value = "label")]
    label_column: String,
    #[arg(long)]
    protected_column: Option<String>,
}

impl DataArgs {
    fn source(&self) -> Result<DatasetSource> {
        let mut src = match self.dataset.as_deref().unwrap_or("credit") {
            "diabetes" => DatasetSource::diabetes(),
            "credit" => DatasetSource::credit(),
            s => match s.strip_prefix("csv:") {
                Some(p) if !p.is_empty() => DatasetSource::Csv {
                    path: PathBuf::from(p),
                    label_column: self.label_column.clone(),
                    protected_column: self.protected_column.clone(),
                },
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown dataset `{s}` (expected diabetes, credit or csv:PATH)"
                    )))
                }
            },
        };
        if let Some(p) = &self.data_path {
            match &mut src {
                DatasetSource::Diabetes { path } | DatasetSource::Credit { path } => *path = p.clone(),
                _ => return Err(Error::InvalidConfig("--data-path only applies to benchmark datasets".into())),
            }
        }
        Ok(src)
    }
}

/// Flags shared by `run` and `score`. Unset flags keep the value from
/// `--config` or the built-in default.
#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case_study: Option<CaseStudy>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo repetitions for scoring.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Comma-separated subset of nun, proto, wachter.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated subset of ours, datashap, random.
    #[arg(long)]
    strategies: Option<String>,
    /// `start:stop:step` or a comma list.
    #[arg(long)]
    fractions: Option<String>,
    /// Retrained models per removal point.
    #[arg(long)]
    retrain: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    /// Leave the wall-clock timestamp out of the report metadata.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    exp: ExperimentArgs,
    /// `ours` or `datashap`.
    #[arg(long, default_value = "ours")]
    strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse()).collect()
}

fn base_config(data: &DataArgs, exp: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &exp.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if exp.config.is_none() || data.dataset.is_some() || data.data_path.is_some() {
        cfg.dataset = data.source()?;
    }
    if let Some(c) = exp.case_study {
        cfg.case_study = c;
    }
    if let Some(f) = exp.folds {
        cfg.folds = f;
    }
    if let Some(s) = exp.seed {
        cfg.seed = s;
    }
    if let Some(r) = exp.reps {
        cfg.n_reps = r;
    }
    if let Some(e) = exp.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = exp.learning_rate {
        cfg.train.learning_rate = lr;
    }
    Ok(cfg)
}

fn run(args: &RunArgs) -> Result<()> {
    let mut cfg = base_config(&args.data, &args.exp)?;
    if let Some(m) = &args.methods {
        cfg.cf_methods = parse_list::<CfMethod>(m)?;
    }
    if let Some(s) = &args.strategies {
        cfg.strategies = parse_list::<Strategy>(s)?;
    }
    if let Some(f) = &args.fractions {
        cfg.removal_fractions = parse_fractions(f)?;
    }
    if let Some(r) = args.retrain {
        cfg.n_retrain = r;
    }
    cfg.validate()?;
    info!("running {} on {}", cfg.case_study, cfg.dataset.name());
    let mut report = run_experiment(&cfg)?;
    if !args.no_timestamp {
        report.metadata.timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    }
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let report_path = args.out.join(format!("report.{}", args.format.extension()));
    emit_report(&report, &report_path, args.format)?;
    if report.folds.is_empty() {
        warn!("report has no curves; curves.csv not written");
    } else {
        emit_curve_data(&report, args.out.join("curves.csv"))?;
    }
    println!("{}", report_path.display());
    Ok(())
}

fn score(args: &ScoreArgs) -> Result<()> {
    let cfg = base_config(&args.data, &args.exp)?;
    let data = cfg.dataset.load()?;
    let scores = score_fold(&data, &cfg, args.fold, args.strategy)?;
    let json = scores.to_json()?;
    match &args.out {
        Some(p) => fs::write(p, json + "\n").map_err(|e| io_error(p, e))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn validate(args: &DataArgs) -> Result<()> {
    let data = args.source()?.load()?;
    let summary = data.summary()?;
    for f in &summary.constant_features {
        warn!("feature `{f}` is constant");
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Score(a) => score(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
