//! `lexigraph`: ingest, decompose, build the graph, index, ask and evaluate.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 external service error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(lexigraph::Error),
}

impl From<lexigraph::Error> for CliError {
    fn from(e: lexigraph::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(lexigraph::Error::Parameter(_)) => 1,
            CliError::Core(e) if e.is_external() => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lexigraph", version, about = "Topic hierarchies, legal knowledge graphs and grounded retrieval")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Validate a JSONL corpus and store it under the output directory.
    Ingest(IngestArgs),
    /// Build the topic hierarchy.
    Decompose(DecomposeArgs),
    /// Build, query or export the knowledge graph.
    #[command(subcommand)]
    Kg(KgCommand),
    /// Build vector indexes.
    Index(IndexArgs),
    /// Answer a question from the graph and indexes.
    Ask(AskArgs),
    /// Evaluate retrieval or graded answers.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_cluster: Option<usize>,
    /// Label every topic with the configured chat client.
    #[arg(long)]
    pub label: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KgCommand {
    /// Build the graph from corpus and hierarchy.
    Build(KgBuildArgs),
    /// Run one graph query and print JSON.
    Query(KgQueryArgs),
    /// Export the graph as triplet CSV or Cypher.
    Export(KgExportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct KgBuildArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("op").required(true).multiple(false)))]
pub struct KgQueryArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Topics and documents linked to a keyword.
    #[arg(long, group = "op")]
    pub keyword: Option<String>,
    /// Count documents of `--kind` whose text contains the phrase.
    #[arg(long, group = "op")]
    pub count_mentions: Option<String>,
    /// Most cited keys among documents of `--kind` mentioning the phrase.
    #[arg(long, group = "op")]
    pub common_citations: Option<String>,
    #[arg(long, default_value = "supreme_case")]
    pub kind: String,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct KgExportArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// `triplet_csv` or `cypher`.
    #[arg(long, default_value = "triplet_csv")]
    pub format: String,
}

#[derive(Debug, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// whole_corpus, chunked, topic_routed or topic_routed_chunked.
    #[arg(long)]
    pub strategy: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct AskArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub question: String,
    /// Keep a conversation window under this id.
    #[arg(long)]
    pub session: Option<String>,
    /// Search this topic's index instead of routing.
    #[arg(long)]
    pub topic: Option<String>,
    /// Print the full answer record as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCommand {
    /// MRR and hit@10 per strategy and corpus part.
    Retrieval(EvalRetrievalArgs),
    /// Grade answer records and summarize them.
    Answers(EvalAnswersArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct EvalRetrievalArgs {
    /// JSONL of {question, gold_doc_id, gold_topic_id?, source_part}.
    #[arg(long)]
    pub cases: PathBuf,
    /// A strategy name or `all`.
    #[arg(long, default_value = "all")]
    pub strategy: String,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalAnswersArgs {
    /// JSONL answer records.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub refusal_patterns: Option<PathBuf>,
    /// JSON sidecar `{question: {scorer: value}}` of external scores.
    #[arg(long)]
    pub external: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
