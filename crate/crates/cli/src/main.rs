//! `nirkit`: generate data, build and query indexes, evaluate recall and
//! compute ranking losses from the command line.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for data
//! errors, 4 when an internal invariant is violated.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nirkit::{ErrorClass, Metric};

#[derive(Debug, Parser)]
#[command(name = "nirkit", version, about = "Dense, late-interaction and sparse retrieval toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-mixture collection with queries.
    Gen(GenArgs),
    /// Build an index artifact from a document file.
    Build(BuildArgs),
    /// Query an index or score multi-vector documents.
    #[command(subcommand)]
    Search(SearchCommand),
    /// Run an evaluation described by a TOML file.
    Eval(EvalArgs),
    /// Generate data, build several indexes and report recall and latency.
    Bench(BenchArgs),
    /// Transcode embedding files between binary and JSON Lines.
    Convert(ConvertArgs),
    /// Evaluate ranking losses over score files.
    #[command(subcommand)]
    Losses(LossCommand),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    clusters: usize,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    /// Standard deviation of the cluster means.
    #[arg(long, default_value_t = 4.0)]
    spread: f64,
    /// Also write this many multi-vector documents.
    #[arg(long, default_value_t = 0)]
    multi: usize,
    #[arg(long, default_value_t = 20)]
    multi_queries: usize,
    #[arg(long, default_value_t = 4)]
    min_tokens: usize,
    #[arg(long, default_value_t = 16)]
    max_tokens: usize,
    /// Also write this many sparse documents.
    #[arg(long, default_value_t = 0)]
    sparse: usize,
    #[arg(long, default_value_t = 20)]
    sparse_queries: usize,
    /// Term draws per sparse document.
    #[arg(long, default_value_t = 32)]
    terms: usize,
    #[arg(long, default_value_t = 1000)]
    vocab: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BuildKind {
    Flat,
    Lsh,
    Ivf,
    Pq,
    Ivfpq,
    Hnsw,
    /// Quantised impact index over sparse JSONL documents.
    Impact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Euclidean,
    InnerProduct,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::InnerProduct => Metric::InnerProduct,
        }
    }
}

/// Index parameters that override the `[index]` table of a config file.
#[derive(Debug, Args, Default)]
struct IndexOverrides {
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long)]
    lists: Option<usize>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    parts: Option<usize>,
    #[arg(long)]
    centroids: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tables: Option<usize>,
    #[arg(long)]
    projections: Option<usize>,
    /// Absolute LSH bucket width.
    #[arg(long, conflicts_with = "width_scale")]
    width: Option<f64>,
    /// LSH bucket width as a multiple of the median projected spread.
    #[arg(long)]
    width_scale: Option<f64>,
    #[arg(long)]
    max_degree: Option<usize>,
    #[arg(long)]
    ef_construction: Option<usize>,
    #[arg(long)]
    ef_search: Option<usize>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// TOML file with an `[index]` table and optional `seed`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<BuildKind>,
    /// Dense `VXE1`/`.jsonl` file, or sparse `.jsonl` for `--kind impact`.
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    index: IndexOverrides,
}

#[derive(Debug, Subcommand)]
enum SearchCommand {
    /// Top-k over a dense index artifact.
    Dense(DenseSearchArgs),
    /// Score multi-vector queries against multi-vector documents.
    Multi(MultiSearchArgs),
    /// Top-k over a quantised impact index.
    Sparse(SparseSearchArgs),
}

#[derive(Debug, Args)]
struct DenseSearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Probe count (IVF family) or beam width (HNSW).
    #[arg(long)]
    breadth: Option<usize>,
    /// Result file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scorer {
    Poly,
    Maxsim,
    Summaxsim,
    Coil,
}

#[derive(Debug, Args)]
struct MultiSearchArgs {
    /// `VXM1` or `.jsonl` documents.
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum)]
    scorer: Scorer,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Leading document vectors used by `poly` and `maxsim`.
    #[arg(long, default_value_t = 1)]
    m: usize,
    /// Token candidates per query row for two-stage `summaxsim`;
    /// exhaustive scoring when absent.
    #[arg(long)]
    kprime: Option<usize>,
    /// `VXW1` CLS projection for `coil`.
    #[arg(long, requires = "tok_proj")]
    cls_proj: Option<PathBuf>,
    /// `VXW1` token projection for `coil`.
    #[arg(long, requires = "cls_proj")]
    tok_proj: Option<PathBuf>,
    /// Truncating token projection width for `coil` without matrix files.
    #[arg(long, conflicts_with = "tok_proj")]
    tok_dim: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SparseMode {
    /// Sum stored impacts of the query terms.
    Impacts,
    /// Weight stored impacts by the query term weights.
    Unicoil,
}

#[derive(Debug, Args)]
struct SparseSearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// Sparse JSONL queries.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum, default_value_t = SparseMode::Unicoil)]
    mode: SparseMode,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    index: IndexOverrides,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    clusters: usize,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    /// Comma-separated index kinds.
    #[arg(long, value_delimiter = ',', default_value = "flat,lsh,ivf,pq,ivfpq,hnsw")]
    kinds: Vec<String>,
    /// TOML file with `[index]` defaults and an `[eval]` table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving `report.json` and one artifact per kind.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    index: IndexOverrides,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    /// The extension (`.vxe`, `.vxm`, `.jsonl`) selects the output format.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Subcommand)]
enum LossCommand {
    /// Contrastive loss over score rows with the positive first.
    Nce {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Binary cross-entropy over rows holding `[s_pos, s_neg]` probabilities.
    Ce {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Check a triples file and report its size.
    Triples {
        #[arg(long)]
        triples: PathBuf,
    },
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Internal => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Build(a) => commands::build(a),
        Command::Search(SearchCommand::Dense(a)) => commands::search_dense(a),
        Command::Search(SearchCommand::Multi(a)) => commands::search_multi(a),
        Command::Search(SearchCommand::Sparse(a)) => commands::search_sparse(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
        Command::Convert(a) => commands::convert(a),
        Command::Losses(c) => commands::losses(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
