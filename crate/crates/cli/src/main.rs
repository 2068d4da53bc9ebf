mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cran_cache::evaluation::Delivery;
use cran_cache::system::ObjectiveSense;

use crate::config::{ExperimentConfig, Scheme};

#[derive(Parser, Debug)]
#[command(name = "cran-cache", version, about = "Cache allocation experiments for multicast C-RAN backhaul")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON experiment configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for geometry and channel draws (overrides `seed`)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Comma-separated scheme names.
    #[arg(long, global = true, value_delimiter = ',')]
    scheme: Option<Vec<Scheme>>,
    /// `time` (expected delivery time) or `rate` (single file only)
    #[arg(long, global = true)]
    objective: Option<ObjectiveSense>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw training and test channel sets.
    GenChannels,
    /// Optimize the cache allocation on the training channels.
    Optimize,
    /// Evaluate a stored allocation on the test channels.
    Evaluate {
        /// Allocation JSON written by `optimize` (or a bare allocation).
        #[arg(long)]
        allocation: PathBuf,
        /// Test channel files written by `gen-channels`; regenerated from
        /// the seed when omitted.
        #[arg(long)]
        channels: Vec<PathBuf>,
        #[arg(long, default_value = "covariance")]
        delivery: DeliveryArg,
    },
    /// Evaluate every configured scheme on the same test channels.
    Compare,
    /// Sweep the Zipf exponent over `zipf_alphas`.
    ZipfSweep,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum DeliveryArg {
    Covariance,
    RankOne,
    DynamicBound,
}

impl From<DeliveryArg> for Delivery {
    fn from(d: DeliveryArg) -> Self {
        match d {
            DeliveryArg::Covariance => Delivery::Covariance,
            DeliveryArg::RankOne => Delivery::RankOne,
            DeliveryArg::DynamicBound => Delivery::DynamicBound,
        }
    }
}

/// Failure classes and their exit codes.
enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Io(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Solver(e) | Failure::Io(e) => e,
        }
    }
}

fn resolve_config(global: &GlobalArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(global.config.as_deref())?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(out) = &global.out {
        config.output_dir = out.clone();
    }
    if let Some(schemes) = &global.scheme {
        if schemes.is_empty() {
            bail!("--scheme needs at least one name");
        }
        config.schemes = schemes.clone();
    }
    if let Some(objective) = global.objective {
        config.objective = objective;
    }
    config.validate().context("configuration rejected")?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = resolve_config(&cli.global).map_err(Failure::Config)?;
    if let Some(threads) = cli.global.parallel {
        if threads == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--parallel must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("cannot start the worker pool")
            .map_err(Failure::Io)?;
    }
    let ctx = commands::Context::new(config, command_name(&cli.command)).map_err(Failure::Io)?;
    match cli.command {
        Command::GenChannels => commands::gen_channels(&ctx),
        Command::Optimize => commands::optimize(&ctx),
        Command::Evaluate {
            allocation,
            channels,
            delivery,
        } => commands::evaluate(&ctx, &allocation, &channels, delivery.into()),
        Command::Compare => commands::compare(&ctx),
        Command::ZipfSweep => commands::zipf_sweep(&ctx, cli.global.scheme.is_some()),
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::GenChannels => "gen-channels",
        Command::Optimize => "optimize",
        Command::Evaluate { .. } => "evaluate",
        Command::Compare => "compare",
        Command::ZipfSweep => "zipf-sweep",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
    }
}
