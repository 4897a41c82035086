//! `cbir`: synthetic data, training, evaluation, retrieval and
//! cross-validated experiments for rating-driven image retrieval.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cbir_core::{Error, ErrorKind, Execution, Result};

use commands::Context;
use config::FileConfig;

const AFTER_HELP: &str = "\
Losses: dm_logcosh, dm_pearson, dm_ranked_pearson, dm_kl, siamese, regression
Schedules: regression_only, similarity_only, two_step_finetune, multi_task
Regimes: supervised, semi_supervised, imported_baseline

Settings are resolved as: command-line flag, then --config file, then default.
Every command that writes files also writes run_manifest.json with the
resolved settings and seed.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numerical
degeneracy.";

#[derive(Debug, Parser)]
#[command(name = "cbir", version, about, after_help = AFTER_HELP)]
struct Cli {
    /// TOML file with top-level seed/out/jobs and one table per command
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs everything sequentially [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log progress (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Synth(commands::synth::SynthArgs),
    Train(commands::train::TrainArgs),
    Eval(commands::eval::EvalArgs),
    Retrieve(commands::retrieve::RetrieveArgs),
    Pipeline(commands::pipeline::PipelineArgs),
}

fn execution(jobs: Option<usize>) -> Result<Execution> {
    match jobs {
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(Execution::Parallel)
        }
        _ => Ok(Execution::Parallel),
    }
}

fn run(cli: Cli, args: &[String]) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let exec = execution(cli.jobs.or(file.jobs))?;
    if exec == Execution::Parallel && !Execution::parallel_available() {
        log::debug!("built without the parallel feature; running sequentially");
    }
    let ctx = Context {
        file: &file,
        config_path: cli.config.as_deref(),
        seed: cli.seed,
        out: cli.out.clone(),
        exec,
        args,
    };
    match &cli.command {
        Command::Synth(a) => commands::synth::run(a, &ctx),
        Command::Train(a) => commands::train::run(a, &ctx),
        Command::Eval(a) => commands::eval::run(a, &ctx),
        Command::Retrieve(a) => commands::retrieve::run(a, &ctx),
        Command::Pipeline(a) => commands::pipeline::run(a, &ctx),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Usage => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(cli, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
