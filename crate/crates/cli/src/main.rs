use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use treematch::inference::Activation;
use treematch::par::Executor;
use treematch::Error;

mod commands;

/// Tree-based extreme multi-label retrieval: train and query label trees over
/// sparse text features.
#[derive(Parser, Debug)]
#[command(name = "treematch", version, about)]
struct Cli {
    /// Worker threads for parallel steps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn a query/label pairs file into a training directory.
    Ingest(IngestArgs),
    /// Fit the TF-IDF vocabulary.
    FitVectorizer(FitVectorizerArgs),
    /// Build the label tree from PIFA embeddings.
    BuildTree(BuildTreeArgs),
    /// Train a model directory.
    Train(TrainArgs),
    /// Threshold the weights of a model directory.
    Prune(PruneArgs),
    /// Retrieve the top labels for each query.
    Predict(PredictArgs),
    /// Compute Recall@k for a model, a predictions file or the BM25 baseline.
    Evaluate(EvaluateArgs),
    /// Measure single-thread query latency.
    Bench(BenchArgs),
    /// Write a synthetic dataset.
    SynthData(SynthArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// `query \t label_id [\t count [\t ...]]` lines.
    #[arg(long)]
    pairs: PathBuf,
    /// Optional `label_id \t title` catalog fixing the label id order.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Minimum summed count for a pair to be positive.
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    /// Hold out this share of distinct queries as a test set.
    #[arg(long, conflicts_with = "split_column")]
    test_fraction: Option<f64>,
    /// Hold out lines whose value in this 0-based column is >= --split-at.
    #[arg(long, requires = "split_at")]
    split_column: Option<usize>,
    #[arg(long)]
    split_at: Option<String>,
    /// Seed for the random split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitVectorizerArgs {
    /// Training directory written by `ingest`.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    data: Option<PathBuf>,
    /// Plain text corpus, one document per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Config file; only its [vectorizer] section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BuildTreeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Config file; only its [tree] section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training directory from `ingest`; defaults to ingesting the pairs
    /// file named in the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Reuse a fitted vocabulary.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Reuse a built label tree (requires --vocab).
    #[arg(long, requires = "vocab")]
    chain: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SearchArgs {
    /// Beam width (defaults to the model's).
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Override the model's activation: sigmoid or l3-hinge.
    #[arg(long)]
    activation: Option<Activation>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// One query per line; text after a tab is ignored, so test files work.
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    /// Score every label instead of searching.
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// `query \t id1,id2,...` lines.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, group = "source")]
    model: Option<PathBuf>,
    /// Predictions written by `predict` for the queries of --test.
    #[arg(long, group = "source")]
    predictions: Option<PathBuf>,
    /// Evaluate BM25 over this `label_id \t title` catalog.
    #[arg(long, group = "source")]
    bm25_catalog: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10, 50, 100])]
    ks: Vec<usize>,
    /// Output directory for report.txt, report.kv and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, group = "source")]
    model: Option<PathBuf>,
    #[arg(long, group = "source")]
    bm25_catalog: Option<PathBuf>,
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5_000)]
    n_labels: usize,
    #[arg(long, default_value_t = 20_000)]
    n_queries: usize,
    #[arg(long, default_value_t = 0.5)]
    synonym_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

/// Exit codes by error class.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 3,
        Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::EmptyCorpus | Error::Parse { .. } => 4,
        Error::Format { .. } => 5,
        Error::Io { .. } => 6,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let executor = Executor::new(cli.threads);
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::FitVectorizer(a) => commands::fit_vectorizer(a, &executor),
        Command::BuildTree(a) => commands::build_tree(a, &executor),
        Command::Train(a) => commands::train(a, &executor),
        Command::Prune(a) => commands::prune(a),
        Command::Predict(a) => commands::predict(a, &executor),
        Command::Evaluate(a) => commands::evaluate(a, &executor),
        Command::Bench(a) => commands::bench(a),
        Command::SynthData(a) => commands::synth_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
