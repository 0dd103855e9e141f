//! `wsmlm` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const STRATEGIES: [&str; 3] = ["uniform", "frequency", "dynamic"];

#[derive(Debug, Parser)]
#[command(name = "wsmlm", version, about = "Weighted masking for masked language model pretraining")]
pub struct Cli {
    /// Worker threads for parallel sections; 1 keeps runs trivially reproducible.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Zipf corpus plus its vocab file.
    GenCorpus(GenCorpusArgs),
    /// Count token frequencies and write the ranked TSV table.
    Freq(FreqArgs),
    /// Train the masked-token predictor under one masking strategy.
    Train(TrainArgs),
    /// Embedding-space statistics for a checkpoint.
    Analyze(AnalyzeArgs),
    /// Paired-seed comparison of two strategies.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Total vocabulary size including the five special tokens.
    #[arg(long)]
    pub vocab: usize,
    #[arg(long)]
    pub sentences: usize,
    #[arg(long, default_value_t = 5)]
    pub min_len: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    /// Zipf exponent.
    #[arg(long, default_value_t = 1.1)]
    pub zipf: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for corpus.txt, vocab.txt and the manifest.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Optional TOML config; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FreqArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output TSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainingFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Frequency clipping threshold [default: 10].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Power-law exponent of the frequency weight [default: 0.5].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Temperature of the loss weight [default: 0.2].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Fraction of maskable tokens to mask per sentence [default: 0.15].
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    /// Clamp for dynamic weights [default: 1e12].
    #[arg(long)]
    pub weight_ceiling: Option<f64>,
    /// EMA factor for dynamic weight updates (dynamic strategy only).
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bins for per-bin metrics: `auto` or `a-b,c-d,...`.
    #[arg(long)]
    pub bins: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// uniform, frequency or dynamic [default: dynamic].
    #[arg(long, value_parser = STRATEGIES)]
    pub strategy: Option<String>,
    #[command(flatten)]
    pub flags: TrainingFlags,
    /// Also write embeddings.tsv.
    #[arg(long)]
    pub export_embeddings: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Corpus used to rank tokens by frequency.
    #[arg(long, required_unless_present = "freq", conflicts_with = "freq")]
    pub corpus: Option<PathBuf>,
    /// Frequency TSV written by `freq`, instead of a corpus.
    #[arg(long)]
    pub freq: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated k values for the mean k-NN distance [default: 3,5,7].
    #[arg(long, value_delimiter = ',')]
    pub knn: Option<Vec<usize>>,
    /// `auto` or `a-b,c-d,...` rank ranges [default: auto].
    #[arg(long)]
    pub bins: Option<String>,
    /// Neighbours per token for the common-token portion [default: 10].
    #[arg(long)]
    pub nn_k: Option<usize>,
    #[arg(long)]
    pub common_range: Option<String>,
    #[arg(long)]
    pub rare_range: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "uniform", value_parser = STRATEGIES)]
    pub baseline: String,
    #[arg(long, default_value = "dynamic", value_parser = STRATEGIES)]
    pub candidate: String,
    #[command(flatten)]
    pub flags: TrainingFlags,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Freq(a) => commands::freq(a),
        Command::Train(a) => commands::train(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Compare(a) => commands::compare(a),
    })
}
