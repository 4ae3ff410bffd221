//! `alab`: build preference datasets, train toy policies on them, compare
//! objectives, check gradients and score dataset contrast.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;
use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "alab", version, about = "Preference-alignment laboratory")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Flat TOML file whose keys mirror flag names. Flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a preference dataset.
    BuildDataset(commands::build::BuildArgs),
    /// Train a toy policy with one objective.
    Train(commands::train::TrainArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Contrast metrics of a dataset.
    Metrics(commands::metrics::MetricsArgs),
    /// Train several objectives on the same data and compare trajectories.
    Dynamics(commands::dynamics::DynamicsArgs),
}

/// Settings shared by every command after merging with the config file.
pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    pub config: ConfigFile,
}

impl Context {
    fn new(common: &CommonArgs) -> CliResult<Self> {
        let config = ConfigFile::load(common.config.as_deref())?;
        let seed = config.pick(common.seed, "seed", 0u64)?;
        let out = config.pick(common.out.clone(), "out", PathBuf::from("."))?;
        std::fs::create_dir_all(&out)
            .map_err(|e| anyhow::anyhow!("cannot create output directory {}: {e}", out.display()))?;
        Ok(Self { seed, out, config })
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let ctx = Context::new(&cli.common)?;
    let result = match cli.command {
        Command::BuildDataset(a) => commands::build::run(&ctx, a),
        Command::Train(a) => commands::train::run(&ctx, a),
        Command::Gradcheck(a) => commands::gradcheck::run(&ctx, a),
        Command::Metrics(a) => commands::metrics::run(&ctx, a),
        Command::Dynamics(a) => commands::dynamics::run(&ctx, a),
    };
    ctx.config.warn_unused();
    result
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("alab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
