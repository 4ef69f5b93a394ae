//! `recourse-hmc`: train a classifier, sample diverse counterfactuals from
//! the Bayesian posterior, and evaluate and diagnose the draws.
//!
//! Exit codes: 0 success (possibly with warnings), 2 usage or input error,
//! 3 runtime failure.

mod commands;
mod manifest;
mod samples;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "recourse-hmc", version, about = "Diverse counterfactual explanations via hierarchical Bayesian NUTS")]
struct Cli {
    /// Worker threads. Results never depend on this.
    #[arg(long, global = true, env = "RECOURSE_HMC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its schema.
    Synth(SynthArgs),
    /// Train the MLP classifier.
    Train(TrainArgs),
    /// Sample the counterfactual posterior for selected instances.
    Explain(ExplainArgs),
    /// Point-estimate counterfactuals from random restarts.
    Baseline(BaselineArgs),
    /// Score samples files: validity, sparsity, proximity, diversity,
    /// robustness and fairness.
    Evaluate(EvaluateArgs),
    /// Convergence diagnostics and rank histograms for a samples file.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct DataArgs {
    /// Schema TOML.
    #[arg(long)]
    pub schema: PathBuf,
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Categorical feature defining subgroups (overrides the schema).
    #[arg(long)]
    pub group_feature: Option<String>,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub rows: usize,
    #[arg(long, default_value_t = 2)]
    pub cont: usize,
    #[arg(long, default_value_t = 2)]
    pub cat: usize,
    /// Levels per categorical feature.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Number of subgroups.
    #[arg(long, default_value_t = 2)]
    pub groups: usize,
    /// Per-group shift of the continuous means.
    #[arg(long, default_value_t = 0.0)]
    pub cluster_shift: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 200)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MassArg {
    Identity,
    Diagonal,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Classifier JSON written by `train`.
    #[arg(long)]
    pub classifier: PathBuf,
    /// Prior config TOML.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Hierarchy depth (overrides the prior config).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub levels: Option<u8>,
    /// Row index, comma-separated row indices, or `neg:N` for the first N
    /// test-split rows the classifier rejects.
    #[arg(long)]
    pub instance: String,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 5000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MassArg::Identity)]
    pub mass: MassArg,
    #[arg(long, default_value_t = 10)]
    pub max_depth: u32,
    /// Credible-interval level for summaries.
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    /// Vary one setting over a grid: `samples`, `sigma`, `w_prox` or
    /// `lambda`, e.g. `w_prox=0.5,1,2`.
    #[arg(long)]
    pub sweep: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long)]
    pub instance: String,
    #[arg(long, default_value_t = 10)]
    pub baseline_restarts: usize,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub classifier: PathBuf,
    /// Samples files; one metrics row each.
    #[arg(long, required = true, num_args = 1..)]
    pub samples: Vec<PathBuf>,
    /// Baseline samples file for the paired diversity table.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Neighbourhood sizes for kNN distance and LOF.
    #[arg(long, value_delimiter = ',', default_value = "3,5,10")]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = recourse_core::metrics::LOF_THRESHOLD)]
    pub lof_threshold: f64,
    /// Dataset label for the validity/sparsity/proximity table.
    #[arg(long)]
    pub dataset_name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, serde::Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Chains shorter than this report InsufficientDraws.
    #[arg(long, default_value_t = 20)]
    pub min_draws: usize,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed command and the exit code class it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Tag an error as a usage/input error (exit 2) or runtime failure (exit 3).
pub trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage(anyhow::anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().runtime()?;
    }
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Explain(a) => commands::explain(&a, cli.threads),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
