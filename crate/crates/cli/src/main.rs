//! `realness`: annotation, training, evaluation and dense realness maps
//! from one entry point.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 compute
//! error.

mod annotate;
mod config;
mod dataset;
mod map;
mod model;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use realness_core::{Error, ErrorKind};
use tracing_subscriber::EnvFilter;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "realness", version, about = "Realness scoring and dense realness maps for AI-generated images")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "realness-out")]
    out: PathBuf,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ask a vision-language provider what looks unrealistic in each image.
    Annotate(annotate::AnnotateArgs),
    /// Train the regressor on one split (or every fold).
    Train(model::TrainArgs),
    /// Train and evaluate image-only, text-only and joint models.
    Ablate(model::AblateArgs),
    /// Score a manifest with a trained checkpoint.
    Eval(model::EvalArgs),
    /// Dense realness map for one image or every record in a manifest.
    Map(map::MapArgs),
    /// Scatter plot of predictions against MOS from evaluation reports.
    Plot(plot::PlotArgs),
    /// Manifest utilities.
    #[command(subcommand)]
    Dataset(dataset::DatasetCommand),
}

/// Failure carrying the exit-code class.
#[derive(Debug)]
pub struct Failure {
    pub kind: ErrorKind,
    pub message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn kind_of(err: &anyhow::Error) -> ErrorKind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return e.kind();
        }
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if cause.is::<std::io::Error>() {
            return ErrorKind::Data;
        }
    }
    ErrorKind::Compute
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Compute => 4,
    }
}

/// Loads the configuration file (if any) and applies command-line overrides.
pub fn resolve_config(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Annotate(a) => annotate::run(g, a),
        Command::Train(a) => model::train(g, a),
        Command::Ablate(a) => model::ablate(g, a),
        Command::Eval(a) => model::eval(g, a),
        Command::Map(a) => map::run(g, a),
        Command::Plot(a) => plot::run(g, a),
        Command::Dataset(c) => dataset::run(g, c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = kind_of(&err);
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(kind))
        }
    }
}
