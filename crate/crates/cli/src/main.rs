mod commands;
mod config;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Translation with retrieved translation-memory examples, glossary terms
/// and MT hints, driven by a completion model.
#[derive(Debug, Parser)]
#[command(name = "adaptmt", version, about)]
pub struct Cli {
    /// TOML configuration file (see the README for the schema).
    #[arg(long, short, global = true, env = "ADAPTMT_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a TSV or JSONL file into a translation-memory store.
    Ingest(IngestArgs),
    /// Translate every segment of an input file.
    Translate(TranslateArgs),
    /// Term extraction.
    #[command(subcommand)]
    Terms(TermsCommand),
    /// Glossary compilation.
    #[command(subcommand)]
    Glossary(GlossaryCommand),
    /// Score result files against references (BLEU, chrF, chrF++).
    Eval(EvalArgs),
    /// Histogram of fuzzy-match similarity for a set of queries.
    Stats(StatsArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// TSV (source<TAB>target) or JSONL ({"source", "target"}) file.
    pub input: PathBuf,
    /// Input format; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// JSONL store to create or extend.
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    /// Translation memory: a JSONL store, or a TSV/JSONL file to ingest.
    #[arg(long)]
    pub tm: PathBuf,
    /// Segments to translate: .tsv (source<TAB>reference), .jsonl, or plain text.
    #[arg(long)]
    pub input: PathBuf,
    /// Results JSONL; the manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Prompt strategy, e.g. zero_shot, few_shot_fuzzy, few_shot_random, few_shot_fuzzy_new_mt.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Number of in-context examples.
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed for random-context selection.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Output length multiplier for the target language.
    #[arg(long)]
    pub multiplier: Option<u32>,
    /// Compiled glossary TSV.
    #[arg(long)]
    pub glossary: Option<PathBuf>,
    /// Per-pair terms JSONL written by `terms extract`.
    #[arg(long)]
    pub terms: Option<PathBuf>,
    /// Never use a segment's own memory entry as its example.
    #[arg(long)]
    pub exclude_self: bool,
    /// Zero the timing fields so reruns against a store and a fixture
    /// provider produce identical bytes.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum TermsCommand {
    /// Ask the model for bilingual terms in every memory pair.
    Extract(ExtractArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub tm: PathBuf,
    /// Per-pair terms JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Terms requested per pair.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
}

#[derive(Debug, Subcommand)]
pub enum GlossaryCommand {
    /// Aggregate extracted terms into a glossary TSV.
    Build(BuildArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Terms JSONL files written by `terms extract`.
    #[arg(long, num_args = 1.., required = true)]
    pub terms: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_freq: Option<u32>,
    #[arg(long)]
    pub max_ngram: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Results JSONL files; each file is one run labelled by its file stem.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// References: .tsv (source<TAB>reference) or one reference per line.
    #[arg(long)]
    pub refs: PathBuf,
    /// Target language code; defaults to the configured target.
    #[arg(long)]
    pub lang: Option<String>,
    /// CSV report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also print a per-language table.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub tm: PathBuf,
    /// Query segments: .tsv, .jsonl, or plain text.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub exclude_self: bool,
    /// CSV output; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<SocketAddr>,
    /// Directory for per-project event logs.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("adaptmt: [{}] {:#}", failure.stage, failure.error);
            ExitCode::from(if failure.stage == "config" { 2 } else { 1 })
        }
    }
}
