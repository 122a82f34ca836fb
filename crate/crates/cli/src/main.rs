//! `subfact` — crime-anchored legal case retrieval pipeline.
//!
//! Workflow: `reformulate` cases into per-crime sub-facts via an LLM,
//! `index` the raw text, `train` the built-in encoder on judged pairs,
//! `rank` candidate pools, `eval` the run, `explain` single matches, and
//! `baseline` for lexical reference runs.

mod commands;
mod config;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{ArgAction, Args, Parser, Subcommand};

use subfact::baselines::LexicalMethod;
use subfact::corpus::DatasetRule;
use subfact::reformulate::ReformulationMode;
use subfact::scoring::Aggregator;

use config::Settings;
use errors::CliError;

#[derive(Parser)]
#[command(
    name = "subfact",
    version,
    about = "Legal case retrieval via crime-anchored sub-fact matching",
    propagate_version = true
)]
struct Cli {
    /// Flat `key = value` config file; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Increase log detail (-v info is default, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite each case into crime-anchored sub-facts via the LLM
    Reformulate(ReformulateArgs),
    /// Build the lexical index; optionally export sub-fact embeddings
    Index(IndexArgs),
    /// Train the built-in encoder on judged positive pairs
    Train(TrainArgs),
    /// Score and rank every candidate pool into a run file
    Rank(RankArgs),
    /// Score a run file against relevance judgments
    Eval(EvalArgs),
    /// Break one query-document score into per-sub-fact matches
    Explain(ExplainArgs),
    /// Rank candidate pools with a lexical method
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct ReformulateArgs {
    /// Sectioned cases, JSON Lines
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Statute store, JSON object of article id -> provision text
    #[arg(long, value_name = "FILE")]
    articles: Option<PathBuf>,
    /// Expert map, JSON object of crime -> [article ids]
    #[arg(long, value_name = "FILE")]
    crime_map: Option<PathBuf>,
    /// Reformulation cache to create or extend, JSON Lines
    #[arg(long, value_name = "FILE")]
    cache: Option<PathBuf>,
    /// kgcr (crime-anchored) or ns (single naive summary)
    #[arg(long, value_parser = ReformulationMode::from_str)]
    mode: Option<ReformulationMode>,
    /// Serve LLM completions from fixture files in this directory
    #[arg(long, value_name = "DIR")]
    mock_llm: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Where to write the lexical index (JSON)
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,
    /// Also export per-sub-fact embeddings here (JSON Lines)
    #[arg(long, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    /// Encoder checkpoint used for the embedding export
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Reformulation cache backing the embedding export
    #[arg(long, value_name = "FILE")]
    cache: Option<PathBuf>,
    #[arg(long, value_parser = ReformulationMode::from_str)]
    mode: Option<ReformulationMode>,
}

#[derive(Args)]
struct TrainArgs {
    /// Graded relevance judgments, TSV
    #[arg(long, value_name = "FILE")]
    qrels: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    cache: Option<PathBuf>,
    /// Where to write the trained encoder checkpoint (JSON)
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Training log, JSON Lines (default: checkpoint with .steps.jsonl)
    #[arg(long, value_name = "FILE")]
    steps_log: Option<PathBuf>,
    #[arg(long, value_parser = ReformulationMode::from_str)]
    mode: Option<ReformulationMode>,
    /// Positive-grade rule: lecard (grade 3) or lecardv2 (grade >= 2)
    #[arg(long, value_parser = DatasetRule::from_str)]
    rule: Option<DatasetRule>,
    /// Hashed token buckets in the encoder
    #[arg(long)]
    vocab_dim: Option<usize>,
    /// Embedding width
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Softmax temperature for both contrastive losses
    #[arg(long, visible_alias = "tau")]
    temperature: Option<f64>,
    /// Weight of the sub-fact loss in the total
    #[arg(long)]
    alpha: Option<f64>,
    /// Gradient steps (0 saves the seeded init unchanged)
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, visible_alias = "lr")]
    learning_rate: Option<f64>,
    /// Root seed for init and batch sampling
    #[arg(long)]
    seed: Option<u64>,
    /// Ablation: drop the case-level ranking loss
    #[arg(long, action = ArgAction::SetTrue)]
    disable_case_loss: bool,
    /// Ablation: drop the sub-fact-level ranking loss
    #[arg(long, action = ArgAction::SetTrue)]
    disable_subfact_loss: bool,
}

#[derive(Args)]
struct RankArgs {
    /// Candidate pools, JSON Lines
    #[arg(long, value_name = "FILE")]
    pools: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    cache: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Where to write the run file (TREC format)
    #[arg(long, value_name = "FILE")]
    run: Option<PathBuf>,
    /// maxsim_sum, mean, kernel_pool, or single_vector
    #[arg(long, value_parser = Aggregator::from_str)]
    aggregator: Option<Aggregator>,
    #[arg(long, value_parser = ReformulationMode::from_str)]
    mode: Option<ReformulationMode>,
    /// Run tag (defaults to subfact-<aggregator>)
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Top up all-positive pools from the BM25 rank window
    #[arg(long, action = ArgAction::SetTrue)]
    supplement: bool,
    /// Corpus (required with --supplement)
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Lexical index (required with --supplement)
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,
    /// Judgments (required with --supplement)
    #[arg(long, value_name = "FILE")]
    qrels: Option<PathBuf>,
    #[arg(long, value_parser = DatasetRule::from_str)]
    rule: Option<DatasetRule>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run file to score (TREC format)
    #[arg(long, value_name = "FILE")]
    run: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    qrels: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pools: Option<PathBuf>,
    /// Corpus, read for the per-query-type breakdown
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Where to write the per-query metric table (CSV)
    #[arg(long, value_name = "FILE")]
    metrics: Option<PathBuf>,
    #[arg(long, value_parser = DatasetRule::from_str)]
    rule: Option<DatasetRule>,
    /// Re-apply pool supplementation so pools match a supplemented run
    #[arg(long, action = ArgAction::SetTrue)]
    supplement: bool,
    /// Lexical index (required with --supplement)
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExplainArgs {
    /// Query case id
    query_id: String,
    /// Document case id
    doc_id: String,
    #[arg(long, value_name = "FILE")]
    cache: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Where to write the explanation (JSON line + text rendering)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, value_parser = Aggregator::from_str)]
    aggregator: Option<Aggregator>,
    #[arg(long, value_parser = ReformulationMode::from_str)]
    mode: Option<ReformulationMode>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pools: Option<PathBuf>,
    /// Lexical index built by `subfact index`
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,
    /// Where to write the run file (TREC format)
    #[arg(long, value_name = "FILE")]
    run: Option<PathBuf>,
    /// bm25 or tfidf
    #[arg(long, value_parser = LexicalMethod::from_str, default_value = "bm25")]
    method: LexicalMethod,
    /// Run tag (defaults to the method name)
    #[arg(long)]
    tag: Option<String>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn load_settings(config: Option<&PathBuf>) -> Result<Settings, CliError> {
    match config {
        Some(path) => Settings::from_file(path),
        None => Ok(Settings::default()),
    }
}

macro_rules! merge {
    ($settings:expr, $args:expr, option: [$($opt:ident),* $(,)?], value: [$($val:ident),* $(,)?]) => {
        $(if $args.$opt.is_some() {
            $settings.$opt = $args.$opt.clone();
        })*
        $(if let Some(v) = $args.$val.clone() {
            $settings.$val = v;
        })*
    };
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let mut settings = load_settings(cli.config.as_ref())?;
    match &cli.command {
        Command::Reformulate(args) => {
            merge!(settings, args,
                option: [corpus, articles, crime_map, cache],
                value: [mode]);
            commands::reformulate(&settings, args.mock_llm.as_deref())
        }
        Command::Index(args) => {
            merge!(settings, args,
                option: [corpus, index, embeddings, checkpoint, cache],
                value: [mode]);
            commands::index(&settings)
        }
        Command::Train(args) => {
            merge!(settings, args,
                option: [qrels, cache, checkpoint, steps_log],
                value: [mode, rule, vocab_dim, embed_dim, temperature, alpha,
                        steps, batch_size, learning_rate, seed]);
            if args.disable_case_loss {
                settings.case_loss = false;
            }
            if args.disable_subfact_loss {
                settings.subfact_loss = false;
            }
            commands::train_encoder(&settings)
        }
        Command::Rank(args) => {
            merge!(settings, args,
                option: [pools, cache, checkpoint, run, tag, corpus, index, qrels],
                value: [aggregator, mode, seed, rule]);
            commands::rank(&settings, args.supplement)
        }
        Command::Eval(args) => {
            merge!(settings, args,
                option: [run, qrels, pools, corpus, metrics, index],
                value: [rule, seed]);
            commands::eval(&settings, args.supplement)
        }
        Command::Explain(args) => {
            merge!(settings, args,
                option: [cache, checkpoint],
                value: [aggregator, mode]);
            commands::explain(&settings, &args.query_id, &args.doc_id, args.out.as_deref())
        }
        Command::Baseline(args) => {
            merge!(settings, args,
                option: [corpus, pools, index, run, tag],
                value: []);
            commands::baseline(&settings, args.method)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version land here too; those are not errors.
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(u8::try_from(err.exit_code()).unwrap_or(1))
        }
    }
}
