//! `rbe`: train recurrent binary embeddings, encode and index keywords,
//! search the index, tabulate miss probabilities and benchmark the scan.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Settings;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "rbe", version, about = "Recurrent binary embeddings with exhaustive bitwise k-NN search")]
struct Cli {
    /// Flat TOML file with default values for any option below.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on query<TAB>keyword click pairs.
    Train(TrainArgs),
    /// Encode one text per line into an embeddings file.
    Encode(EncodeArgs),
    /// Build a partitioned keyword index from an embeddings file.
    Build(BuildArgs),
    /// Search an index with one query or a batch file.
    Query(QueryArgs),
    /// Print the miss-probability table as CSV.
    Analyze(AnalyzeArgs),
    /// Compare binary and float scan throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    hash_dim: Option<u32>,
    /// Dense feature width `m`.
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Code width `n` in bits.
    #[arg(long)]
    code_dim: Option<usize>,
    /// Residual steps `u` on the query side.
    #[arg(long)]
    query_steps: Option<usize>,
    /// Residual steps `v` on the keyword side.
    #[arg(long)]
    keyword_steps: Option<usize>,
    /// straight_through, straight_through_variant or annealing_tanh.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    residual_weights: Option<bool>,
    #[arg(long)]
    use_bias: Option<bool>,
    #[arg(long)]
    full_precision: Option<bool>,
    /// Softmax smoothing factor.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    initial_alpha: Option<f64>,
    #[arg(long)]
    alpha_growth: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Click pairs, one query<TAB>keyword per line.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Where to write the model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where to write per-epoch metrics as JSON lines.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    decay_every: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Texts to encode, one per line; the id is the zero-based line number.
    #[arg(long)]
    keywords: Option<PathBuf>,
    /// Where to write the embeddings file.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Tower to encode with: keyword (default) or query.
    #[arg(long)]
    side: Option<String>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Where to write the index file.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    partitions: Option<usize>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// A single query text.
    #[arg(long, conflicts_with = "batch")]
    text: Option<String>,
    /// A file with one query per line.
    #[arg(long)]
    batch: Option<PathBuf>,
    /// Number of results per query.
    #[arg(long, short = 'n')]
    top_n: Option<usize>,
    #[arg(long)]
    threads_per_block: Option<usize>,
    #[arg(long)]
    items_per_thread: Option<usize>,
    #[arg(long)]
    queue_len: Option<usize>,
    /// Write results here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Candidate count `C`.
    #[arg(long)]
    candidates: Option<u64>,
    /// Relevant count `N`.
    #[arg(long)]
    relevant: Option<u64>,
    /// Items per thread `I`.
    #[arg(long)]
    per_thread: Option<u64>,
    /// Largest `l` in `P(L <= l)`.
    #[arg(long)]
    max_missed: Option<u64>,
    /// Add Monte Carlo columns.
    #[arg(long)]
    simulate: bool,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    queue_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Time searches of this index instead of a synthetic corpus.
    #[arg(long)]
    index: Option<PathBuf>,
    /// binary, float or both.
    #[arg(long)]
    mode: Option<String>,
    /// Synthetic corpus size.
    #[arg(long)]
    corpus_size: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    query_planes: Option<usize>,
    #[arg(long)]
    keyword_planes: Option<usize>,
    #[arg(long, short = 'n')]
    top_n: Option<usize>,
    #[arg(long)]
    threads_per_block: Option<usize>,
    #[arg(long)]
    items_per_thread: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Copies every `Some` field of `args` over the same field of `settings`.
macro_rules! overlay {
    ($settings:expr, $args:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $args.$field.clone() {
            $settings.$field = Some(v);
        })+
    };
}

fn run(cli: Cli) -> CliResult<()> {
    let mut s = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    match cli.command {
        Command::Train(a) => {
            overlay!(s, a; pairs, checkpoint, metrics, epochs, learning_rate, lr_decay, decay_every, batch_size,
                negatives, validation_fraction, patience, seed);
            overlay!(s, a.model; hash_dim, feature_dim, code_dim, query_steps, keyword_steps, estimator,
                residual_weights, use_bias, full_precision, gamma, initial_alpha, alpha_growth);
            commands::train(&s)
        }
        Command::Encode(a) => {
            overlay!(s, a; checkpoint, keywords, embeddings, side);
            commands::encode(&s)
        }
        Command::Build(a) => {
            overlay!(s, a; embeddings, index, partitions);
            commands::build(&s)
        }
        Command::Query(a) => {
            overlay!(s, a; index, checkpoint, top_n, threads_per_block, items_per_thread, queue_len, output);
            let input = match (a.text, a.batch) {
                (Some(t), None) => commands::QueryInput::Text(t),
                (None, Some(p)) => commands::QueryInput::Batch(p),
                _ => return Err(error::CliError::usage("query: give --text or --batch")),
            };
            commands::query(&s, input)
        }
        Command::Analyze(a) => {
            overlay!(s, a; candidates, relevant, per_thread, max_missed, trials, queue_len, seed, output);
            if a.simulate {
                s.simulate = Some(true);
            }
            commands::analyze(&s)
        }
        Command::Bench(a) => {
            overlay!(s, a; index, mode, corpus_size, dim, query_planes, keyword_planes, top_n, threads_per_block,
                items_per_thread, runs, seed);
            commands::bench(&s)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rbe: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
