//! `pkg`: build, query, serve and evaluate pseudo-knowledge graphs.

pub mod commands;
pub mod server;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pkg", version, about = "Pseudo-knowledge-graph builder and retriever")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a graph from a corpus and save it.
    Build(BuildArgs),
    /// Retrieve context for one query.
    Query(QueryArgs),
    /// Serve retrieval over HTTP.
    Serve(ServeArgs),
    /// Measure recall@k and MRR per channel setting.
    Eval(EvalArgs),
    /// Check a graph file and list every violation.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Args)]
pub struct LlmArgs {
    /// Use a language model (endpoint from PKG_LLM_ENDPOINT unless a mock script is given).
    #[arg(long, value_enum, default_value = "off")]
    pub llm: Switch,
    /// JSON Lines of {"match", "reply"} rules answering model calls offline.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Directory overriding the shipped prompt templates file by file.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BuildArgs {
    /// Directory of .txt files, a JSON Lines corpus, or one text file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target chunk length in chars.
    #[arg(long, default_value_t = 800)]
    pub chunk_size: usize,
    /// Chars shared by consecutive chunks.
    #[arg(long, default_value_t = 120)]
    pub overlap: usize,
    /// Meta-paths with fewer edges than this are indexed.
    #[arg(long, default_value_t = pkg_core::metapath::DEFAULT_MAX_LEN)]
    pub max_path_len: usize,
    /// Stored instances per start node and template.
    #[arg(long, default_value_t = pkg_core::metapath::DEFAULT_CAP)]
    pub path_cap: usize,
    #[arg(long, default_value_t = 2)]
    pub glean_rounds: usize,
    #[arg(long, default_value_t = pkg_core::embedding::DEFAULT_DIM)]
    pub embed_dim: usize,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct QueryArgs {
    #[arg(short = 'g', long = "graph")]
    pub graph: PathBuf,
    #[arg(short = 'q', long = "query")]
    pub query: String,
    #[arg(short = 'k', default_value_t = 10)]
    pub k: usize,
    /// Comma-separated subset of regex, vector, metapath.
    #[arg(long, default_value = "regex,vector,metapath")]
    pub channels: String,
    /// Print the items as a JSON array with sorted keys.
    #[arg(long)]
    pub json: bool,
    /// Context budget in chunk-text chars.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Let the model re-rank fused candidates (needs --llm on).
    #[arg(long)]
    pub rerank: bool,
    #[command(flatten)]
    pub llm: LlmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(short = 'g', long = "graph")]
    pub graph: PathBuf,
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(short = 'g', long = "graph", required_unless_present = "generate", conflicts_with = "generate")]
    pub graph: Option<PathBuf>,
    /// JSON Lines of {"question", "gold_chunk_ids", "tag"} records.
    #[arg(long, required_unless_present = "generate", conflicts_with = "generate")]
    pub qa: Option<PathBuf>,
    #[arg(short = 'k', default_value_t = 5)]
    pub k: usize,
    /// One channel setting, comma-separated; repeat for several. Default: the ablation ladder.
    #[arg(long)]
    pub channels: Vec<String>,
    /// Generate a synthetic corpus with N one-hop and N two-hop facts and evaluate on it.
    #[arg(long, value_name = "N")]
    pub generate: Option<usize>,
    #[arg(long, default_value_t = 7, value_name = "S")]
    pub seed: u64,
    /// With --generate, write corpus.jsonl, qa.jsonl and graph.pkg here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(short = 'g', long = "graph")]
    pub graph: PathBuf,
}

/// Runs a parsed command line; the error is reported by the caller with exit code 1.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Build(args) => commands::build(&args),
        Command::Query(args) => commands::query(&args),
        Command::Serve(args) => server::serve_blocking(&args),
        Command::Eval(args) => commands::eval(&args),
        Command::Validate(args) => commands::validate(&args),
    }
}
