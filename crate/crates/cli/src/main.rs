//! `flexlog`: ingest, mutate, prepare, train, parse, fit templates, evaluate and report.

mod commands;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flexlog::evaluator::EvalError;
use flexlog::models::ModelError;
use flexlog::nncore::NnError;
use flexlog::templates::TemplateError;

/// Bad input, configuration or arguments (exit 1) as opposed to internal failures (exit 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UserError(pub String);

#[derive(Parser)]
#[command(name = "flexlog", version, about = "Event-value extraction from evolving log files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a log, label it with the dataset's value pattern and split train/test.
    Ingest(IngestArgs),
    /// Write the seven mutated test variants.
    Mutate(MutateArgs),
    /// Build the vocabulary and encode the training split.
    Prep(DatasetOut),
    /// Train one model.
    Train(TrainArgs),
    /// Predict every variant with a trained model.
    Parse(ParseArgs),
    /// Fit Drain and/or AEL on each variant.
    FitTemplates(FitArgs),
    /// Run the experiment matrix.
    Eval(EvalArgs),
    /// Write CSV/JSON reports from the evaluated matrix.
    Report(ReportArgs),
    /// ingest, mutate, prep, train, parse, fit-templates, eval and report in sequence.
    All(AllArgs),
}

#[derive(Args, Clone)]
pub struct DatasetOut {
    /// Dataset config (TOML event spec).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone)]
pub struct SourceArgs {
    /// Raw log file; defaults to `$FLEXLOG_LOGHUB_DIR/<dataset_name>.log`.
    #[arg(long, conflicts_with = "synthetic")]
    pub log: Option<PathBuf>,
    /// Generate this many synthetic lines instead of reading a log.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 6000)]
    pub train_lines: usize,
    #[arg(long, default_value_t = 2000)]
    pub test_lines: usize,
}

#[derive(Args, Clone)]
pub struct SeedArg {
    #[arg(long, env = "FLEXLOG_SEED", default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args, Clone)]
pub struct IngestArgs {
    #[command(flatten)]
    pub target: DatasetOut,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Clone)]
pub struct StartLines {
    #[arg(long, value_delimiter = ',', default_values_t = [500usize, 1000, 1500])]
    pub start_lines: Vec<usize>,
}

#[derive(Args, Clone)]
pub struct MutateArgs {
    #[command(flatten)]
    pub target: DatasetOut,
    #[command(flatten)]
    pub start: StartLines,
}

#[derive(Args, Clone)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 60)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Args, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub target: DatasetOut,
    /// lstm, stateful-lstm, fcn, lstm-fcn or gru-fcn.
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Clone)]
pub struct ParseArgs {
    #[command(flatten)]
    pub target: DatasetOut,
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Only this variant (e.g. `none`, `syn-500`); default all.
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Args, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub target: DatasetOut,
    /// drain and/or ael.
    #[arg(long, value_delimiter = ',', default_values_t = ["drain".to_string(), "ael".to_string()])]
    pub method: Vec<String>,
    #[arg(long)]
    pub variant: Option<String>,
}

#[derive(Args, Clone)]
pub struct EvalOpts {
    /// Template and lookup baselines to include: drain, ael, lookup.
    #[arg(long, value_delimiter = ',', default_values_t = ["drain".to_string(), "ael".to_string()])]
    pub baseline: Vec<String>,
    /// Runtime column: `wall` seconds or `off` (all zero).
    #[arg(long, default_value = "wall")]
    pub timing: String,
    #[command(flatten)]
    pub start: StartLines,
}

#[derive(Args, Clone)]
pub struct EvalArgs {
    #[arg(long, required = true)]
    pub dataset: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_values_t = ["stateful-lstm".to_string()])]
    pub model: Vec<String>,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub eval: EvalOpts,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Clone)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = ["csv".to_string(), "json".to_string()])]
    pub format: Vec<String>,
}

#[derive(Args, Clone)]
pub struct AllArgs {
    #[command(flatten)]
    pub target: DatasetOut,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_values_t = ["stateful-lstm".to_string()])]
    pub model: Vec<String>,
    #[command(flatten)]
    pub seed: SeedArg,
    #[command(flatten)]
    pub eval: EvalOpts,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long, value_delimiter = ',', default_values_t = ["csv".to_string(), "json".to_string()])]
    pub format: Vec<String>,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UserError>() || cause.is::<std::io::Error>() || cause.is::<flexlog::corpus::CorpusError>() {
            return 1;
        }
        if cause.is::<flexlog::textprep::PrepError>() {
            return 1;
        }
        if let Some(m) = cause.downcast_ref::<ModelError>() {
            return match m {
                ModelError::NonFinite { .. } | ModelError::Nn(NnError::Shape(_)) => 2,
                _ => 1,
            };
        }
        if let Some(n) = cause.downcast_ref::<NnError>() {
            return match n {
                NnError::Checkpoint(_) | NnError::Io(_) | NnError::Config(_) => 1,
                NnError::Shape(_) => 2,
            };
        }
        if let Some(t) = cause.downcast_ref::<TemplateError>() {
            return match t {
                TemplateError::Config(_) | TemplateError::Corpus(_) => 1,
                _ => 2,
            };
        }
        if let Some(ev) = cause.downcast_ref::<EvalError>() {
            return match ev {
                EvalError::LengthMismatch { .. } => 2,
                _ => 1,
            };
        }
        if let Some(f) = cause.downcast_ref::<flexlog::Error>() {
            return match f {
                flexlog::Error::Io { .. } | flexlog::Error::Corpus(_) | flexlog::Error::Prep(_) => 1,
                flexlog::Error::Model(m) => match m {
                    ModelError::NonFinite { .. } => 2,
                    _ => 1,
                },
                flexlog::Error::Eval(EvalError::LengthMismatch { .. }) => 2,
                flexlog::Error::Eval(_) => 1,
                flexlog::Error::Template(TemplateError::Config(_)) => 1,
                flexlog::Error::Nn(NnError::Checkpoint(_) | NnError::Io(_)) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Mutate(a) => commands::mutate(&a),
        Command::Prep(a) => commands::prep(&a),
        Command::Train(a) => commands::train(&a),
        Command::Parse(a) => commands::parse(&a),
        Command::FitTemplates(a) => commands::fit_templates(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Report(a) => commands::report(&a),
        Command::All(a) => commands::all(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
