//! The `kborda` command line.
//!
//! ```text
//! kborda [--config run.toml] [--seed N] [--set key=value]... [--verbose] <command>
//! ```
//!
//! Exit codes: 0 on success, 2 for configuration or validation errors, 1 for
//! anything that fails at run time.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::infer::InferenceMode;

#[derive(Debug, Parser)]
#[command(name = "kborda", version, about = "Attention, Gaussian-mask and Q-walk decoding on toy NMT")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; per-module seeds derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus, embeddings and a matching config.
    GenToy(GenToyArgs),
    /// Train the attention model.
    Train,
    /// Election satisfaction and Gaussian fits of validation attention.
    Analyze(AnalyzeArgs),
    /// Train the Q-network on the similarity graph.
    TrainQ(ModelArgs),
    /// Translate sentences, one per line.
    Infer(InferArgs),
    /// BLEU, latency and satisfaction on the test split.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3000)]
    pub pairs: usize,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Seq2seq checkpoint [default: <output.dir>/model.json].
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Analyze previously exported attention instead of running the model.
    #[arg(long, conflicts_with = "model")]
    pub attention: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: InferenceMode,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Q-network checkpoint; required for gaussian_rl.
    #[arg(long)]
    pub qnet: Option<PathBuf>,
    /// Sentences to translate; `-` reads stdin.
    #[arg(long, default_value = "-")]
    pub input: PathBuf,
    /// Write per-step position weights as JSON.
    #[arg(long)]
    pub emit_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Q-network checkpoint; without it gaussian_rl is reported as n/a.
    #[arg(long)]
    pub qnet: Option<PathBuf>,
    /// Test pairs (TSV) [default: the test split of the corpus].
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Report directory [default: <output.dir>/report].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<InferenceMode, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kborda: {e}");
            e.exit_code()
        }
    }
}
