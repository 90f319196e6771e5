//! `nsp-ope` command-line front end.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Failure;

#[derive(Debug, Parser)]
#[command(name = "nsp-ope", version, about = "Off-policy evaluation of natural stochastic policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (used by `experiment`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; overrides the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for internal parallelism.
    #[arg(long, global = true, env = "NSP_OPE_THREADS")]
    threads: Option<usize>,
    /// Output file; stdout when absent. A manifest is written next to it.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Print progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw behavior data from a process and write it as JSON lines.
    Simulate(SimulateArgs),
    /// Exact efficiency bounds of a process, behavior policy and specification.
    Bounds(BoundsArgs),
    /// Run estimators on a dataset.
    Estimate(EstimateArgs),
    /// Run a replication experiment from `--config`.
    Experiment,
    /// Run the enumeration-oracle invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    /// Policy file; its behavior policy generates the data.
    #[arg(long)]
    pub policy: PathBuf,
    /// Episodes (finite horizon) or transitions (discounted).
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum)]
    pub sampler: Option<Sampler>,
    /// Steps discarded before recording a chain.
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    /// Independent finite-horizon episodes.
    Episodes,
    /// One stationary chain started from the sampling distribution.
    Chain,
    /// Independent tuples with `s` drawn from the sampling distribution.
    Iid,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// JSON-lines dataset.
    #[arg(long)]
    pub data: PathBuf,
    /// Policy file; only the behavior policy of `V2` is read from it.
    #[arg(long)]
    pub policy: PathBuf,
    /// Estimator name; repeat or comma-separate for several.
    #[arg(long, required = true, value_delimiter = ',')]
    pub estimator: Vec<String>,
    #[arg(long = "K", default_value_t = 2)]
    pub k: usize,
    /// Process file supplying `gamma` and the initial distribution when the
    /// dataset header lacks them.
    #[arg(long)]
    pub mdp: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
}

/// Shared global options.
#[derive(Debug, Clone)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub verbose: u8,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--threads: must be >= 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(anyhow::anyhow!("--threads: {e}")))?;
    }
    let g = Globals { config: cli.config, seed: cli.seed, output: cli.output, format: cli.format, verbose: cli.verbose };
    if g.config.is_some() && !matches!(cli.command, Command::Experiment) {
        return Err(Failure::Config(anyhow::anyhow!("--config is only read by `experiment`")));
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&g, &a),
        Command::Bounds(a) => commands::bounds(&g, &a),
        Command::Estimate(a) => commands::estimate(&g, &a),
        Command::Experiment => commands::experiment(&g),
        Command::Selftest(a) => commands::selftest(&g, &a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
