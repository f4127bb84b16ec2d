//! `maxzero`: max-tests of many zero restrictions on a CSV dataset, and
//! Monte Carlo experiments driven by TOML/JSON configurations.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "maxzero", version, about = "Max-tests of zero restrictions with a restricted wild bootstrap")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bootstrap max / max-t tests on a dataset.
    Test(DataArgs),
    /// Every max and Wald variant side by side on a dataset.
    Compare(DataArgs),
    /// Run a Monte Carlo experiment from a configuration file.
    Mc(McArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Flat,
    Tstat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeArg {
    Robust,
    Homoskedastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV with columns y, d1..dK (nuisance), t1..tJ (tested).
    #[arg(long)]
    pub data: PathBuf,
    /// Significance level; repeatable.
    #[arg(long = "alpha", default_values_t = [0.01, 0.05, 0.10])]
    pub alpha: Vec<f64>,
    /// max, max_t, wald_asymptotic, wald_normalized, wald_bootstrap or
    /// wald_normalized_bootstrap; repeatable.
    #[arg(long = "method")]
    pub method: Vec<String>,
    /// Bootstrap replicates.
    #[arg(long = "M", default_value_t = 1000)]
    pub m: usize,
    /// Number of tested columns used: a count, `rate`, or `all`.
    #[arg(long, default_value = "all")]
    pub k: String,
    /// Weight scheme when no --method is given.
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    #[arg(long, value_enum, default_value_t = SeArg::Robust)]
    pub se: SeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: MAXZERO_WORKERS or all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct McArgs {
    /// Experiment configuration (TOML or JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Worker threads; overrides MAXZERO_WORKERS and the configuration.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Test(args) => run::test(&args, false),
        Command::Compare(args) => run::test(&args, true),
        Command::Mc(args) => run::mc(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
