//! `cgm`: train, sample, score and benchmark tabular generative models.
//!
//! Exit codes: 0 success, 1 every benchmark cell failed, 2 bad arguments or
//! config, 3 data or checkpoint error, 4 numeric failure during training.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "cgm", version, about = "Order-agnostic transformer for tabular data synthesis")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a CSV table and write a checkpoint.
    Train(TrainArgs),
    /// Sample rows from a checkpoint.
    Generate(GenerateArgs),
    /// Mean log-likelihood of a CSV table under a checkpoint.
    Evaluate(EvaluateArgs),
    /// Run the synthesizer leaderboard.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
pub struct SeedArg {
    /// Master seed.
    #[arg(long, env = "CGM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training table.
    #[arg(long)]
    pub data: PathBuf,
    /// Column hints: {"column": {"kind": "categorical" | "numerical", "bins": N}}.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history JSON; defaults to the checkpoint path with `.history.json` appended.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Training config JSON; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Probability of hiding a feature from the context during training.
    #[arg(long)]
    pub drop_prob: Option<f64>,
    /// Train without prefix subsampling.
    #[arg(long)]
    pub no_prefix_subsampling: bool,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DequantizationArg {
    Uniform,
    Midpoint,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Number of rows.
    #[arg(long)]
    pub rows: usize,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Hold a column fixed: `column=value` (repeatable).
    #[arg(long = "fixed", value_name = "COLUMN=VALUE")]
    pub fixed: Vec<String>,
    /// Divide logits by this before sampling.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Comma-separated column order used for every row instead of a random one.
    #[arg(long, value_delimiter = ',')]
    pub order: Option<Vec<String>>,
    /// How sampled bins become numbers.
    #[arg(long, value_enum, default_value = "uniform")]
    pub dequantization: DequantizationArg,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderArg {
    /// Columns in checkpoint order.
    Fixed,
    /// A fresh random order per row and repeat.
    Random,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "fixed")]
    pub order: OrderArg,
    /// Independent random orders to score (with `--order random`).
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// Benchmark config JSON; the shipped default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict cells: `dataset=NAME`, `synthesizer=NAME` or `seed=N` (repeatable).
    #[arg(long = "filter", value_name = "KEY=VALUE")]
    pub filter: Vec<String>,
    /// Override the config's worker count.
    #[arg(long)]
    pub workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new().filter_level(level).init();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Benchmark(a) => commands::benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
