//! One function per subcommand. Each validates its inputs up front
//! (aggregated), then loads data, runs the owning library module, and
//! writes artifacts atomically with a provenance header.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use subfact::baselines::{LexicalIndex, LexicalMethod};
use subfact::corpus::{
    load_pools, CandidatePool, Corpus, DatasetRule, JudgmentSet, QueryType,
};
use subfact::encoder::{SubfactEncoder, ToyEncoderModel};
use subfact::eval::{evaluate_run, EvalConfig, RankedRun};
use subfact::io::write_atomic;
use subfact::llm::{HttpLlmClient, LlmClient, MockLlm};
use subfact::pipeline::{
    explain_pair, rank_pools, reformulate_corpus, render_explanation, supplement_pools,
};
use subfact::reformulate::{ArticleStore, CrimeArticleMap, ReformulationCache};
use subfact::training::{steps_to_jsonl, train, TrainConfig};

use crate::config::{finish_validation, require_path, Settings};
use crate::errors::CliError;

/// Provenance comment block leading every artifact this binary writes.
fn artifact_header(command: &str, seed: u64, extras: &[(&str, String)]) -> String {
    let mut header = format!("# subfact {command}\n# seed: {seed}\n");
    for (key, value) in extras {
        header.push_str(&format!("# {key}: {value}\n"));
    }
    header
}

pub fn reformulate(settings: &Settings, mock_llm: Option<&Path>) -> Result<(), CliError> {
    let mut problems = Vec::new();
    let corpus_path = require_path(&mut problems, "corpus", &settings.corpus, true);
    let articles_path = require_path(&mut problems, "articles", &settings.articles, true);
    let map_path = require_path(&mut problems, "crime_map", &settings.crime_map, true);
    let cache_path = require_path(&mut problems, "cache", &settings.cache, false);
    if let Some(dir) = mock_llm {
        if !dir.is_dir() {
            problems.push(format!(
                "mock-llm: {} is not a directory",
                dir.display()
            ));
        }
    }
    finish_validation("reformulate", problems)?;

    let client: Box<dyn LlmClient> = match mock_llm {
        Some(dir) => Box::new(MockLlm::new(dir)),
        None => Box::new(HttpLlmClient::from_env()?),
    };
    let corpus = Corpus::load(&corpus_path)?;
    let store = ArticleStore::load(&articles_path)?;
    let map = CrimeArticleMap::load(&map_path, &store)?;

    let outcome = reformulate_corpus(
        &corpus,
        client.as_ref(),
        &store,
        &map,
        settings.mode,
        &cache_path,
    )?;
    for warning in &outcome.warnings {
        log::warn!("{warning}");
    }
    println!(
        "reformulated {} cases in mode {}: {} fresh, {} cached, {} llm calls",
        corpus.len(),
        settings.mode,
        outcome.fresh,
        outcome.cached,
        client.calls(),
    );
    if !outcome.warnings.is_empty() {
        println!("{} warnings logged", outcome.warnings.len());
    }
    println!("cache: {}", cache_path.display());
    Ok(())
}

/// The exported embedding row; the shape the ranking side reads back.
#[derive(Serialize)]
struct EmbeddingRow<'a> {
    case_id: &'a str,
    subfact_index: usize,
    vector: &'a [f64],
}

pub fn index(settings: &Settings) -> Result<(), CliError> {
    let mut problems = Vec::new();
    let corpus_path = require_path(&mut problems, "corpus", &settings.corpus, true);
    let index_path = require_path(&mut problems, "index", &settings.index, false);
    let embeddings_path = settings.embeddings.clone();
    let mut checkpoint_path = None;
    let mut cache_path = None;
    if embeddings_path.is_some() {
        // Embedding export re-encodes the cache with a trained checkpoint.
        checkpoint_path = Some(require_path(
            &mut problems,
            "checkpoint",
            &settings.checkpoint,
            true,
        ));
        cache_path = Some(require_path(&mut problems, "cache", &settings.cache, true));
    }
    finish_validation("index", problems)?;

    let corpus = Corpus::load(&corpus_path)?;
    let lexical = LexicalIndex::build(&corpus)?;
    lexical.save(&index_path)?;
    println!(
        "lexical index: {} documents -> {}",
        lexical.total_docs(),
        index_path.display()
    );

    if let Some(embeddings_path) = embeddings_path {
        let model = ToyEncoderModel::load(&checkpoint_path.expect("validated"))?;
        let cache = ReformulationCache::load(&cache_path.expect("validated"))?;
        let mut body = String::new();
        let mut cases = 0usize;
        let mut vectors = 0usize;
        for case in cache.cases(settings.mode) {
            let embeds = model.encode_case(case)?;
            for (subfact_index, embedding) in embeds.iter().enumerate() {
                let row = EmbeddingRow {
                    case_id: &case.case_id,
                    subfact_index,
                    vector: &embedding.values,
                };
                body.push_str(&serde_json::to_string(&row).expect("row serializes"));
                body.push('\n');
                vectors += 1;
            }
            cases += 1;
        }
        let header = artifact_header("index", settings.seed, &[("mode", settings.mode.to_string())]);
        write_atomic(&embeddings_path, format!("{header}{body}").as_bytes())?;
        println!(
            "embeddings: {cases} cases, {vectors} vectors -> {}",
            embeddings_path.display()
        );
    }
    Ok(())
}

pub fn train_encoder(settings: &Settings) -> Result<(), CliError> {
    let mut problems = Vec::new();
    let qrels_path = require_path(&mut problems, "qrels", &settings.qrels, true);
    let cache_path = require_path(&mut problems, "cache", &settings.cache, true);
    let checkpoint_path = require_path(&mut problems, "checkpoint", &settings.checkpoint, false);
    if !(settings.temperature.is_finite() && settings.temperature > 0.0) {
        problems.push(format!(
            "temperature must be a positive number, got {}",
            settings.temperature
        ));
    }
    if !(settings.alpha.is_finite() && settings.alpha >= 0.0) {
        problems.push(format!(
            "alpha must be a non-negative number, got {}",
            settings.alpha
        ));
    }
    if settings.batch_size < 2 {
        problems.push(format!(
            "batch_size must be at least 2 for in-batch negatives, got {}",
            settings.batch_size
        ));
    }
    if !(settings.learning_rate.is_finite() && settings.learning_rate > 0.0) {
        problems.push(format!(
            "learning_rate must be a positive number, got {}",
            settings.learning_rate
        ));
    }
    if settings.vocab_dim == 0 || settings.vocab_dim > u32::MAX as usize {
        problems.push(format!(
            "vocab_dim must be in 1..=2^32-1, got {}",
            settings.vocab_dim
        ));
    }
    if settings.embed_dim == 0 {
        problems.push("embed_dim must be at least 1".to_string());
    }
    finish_validation("train", problems)?;
    let steps_log_path = settings
        .steps_log
        .clone()
        .unwrap_or_else(|| checkpoint_path.with_extension("steps.jsonl"));

    let judgments = JudgmentSet::load(&qrels_path)?;
    let cache = ReformulationCache::load(&cache_path)?;
    let pairs =
        subfact::pipeline::build_train_pairs(&cache, settings.mode, &judgments, settings.rule)?;
    let config = TrainConfig {
        temperature: settings.temperature,
        alpha: settings.alpha,
        batch_size: settings.batch_size,
        learning_rate: settings.learning_rate,
        steps: settings.steps,
        seed: settings.seed,
        case_loss_enabled: settings.case_loss,
        subfact_loss_enabled: settings.subfact_loss,
    };
    let run = train(&pairs, settings.vocab_dim, settings.embed_dim, &config)?;
    run.model.save(&checkpoint_path)?;
    let header = artifact_header(
        "train",
        settings.seed,
        &[
            ("mode", settings.mode.to_string()),
            ("rule", settings.rule.to_string()),
            ("pairs", pairs.len().to_string()),
        ],
    );
    write_atomic(
        &steps_log_path,
        format!("{header}{}", steps_to_jsonl(&run.steps)).as_bytes(),
    )?;

    println!(
        "trained on {} pairs for {} steps (mode {}, rule {})",
        pairs.len(),
        run.steps.len(),
        settings.mode,
        settings.rule
    );
    if let (Some(first), Some(last)) = (run.steps.first(), run.steps.last()) {
        println!("loss: {:.6} -> {:.6}", first.total, last.total);
    }
    println!("checkpoint: {}", checkpoint_path.display());
    println!("steps log: {}", steps_log_path.display());
    Ok(())
}

/// Build each pool's full BM25 ranking and top up all-positive pools from
/// the fixed rank window, seeded per query off the root seed.
fn apply_supplementation(
    pools: &[CandidatePool],
    corpus: &Corpus,
    index: &LexicalIndex,
    judgments: &JudgmentSet,
    rule: DatasetRule,
    seed: u64,
) -> Result<Vec<CandidatePool>, CliError> {
    let mut rankings: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for pool in pools {
        let query = corpus.get(&pool.query_id).ok_or_else(|| {
            CliError::Data(format!("query {:?} is not in the corpus", pool.query_id))
        })?;
        let ranked = index.rank_all(LexicalMethod::Bm25, query.fact(), Some(&pool.query_id))?;
        rankings.insert(
            pool.query_id.clone(),
            ranked.into_iter().map(|(id, _)| id).collect(),
        );
    }
    let outcomes = supplement_pools(pools, judgments, rule, &rankings, seed)?;
    let mut supplemented = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        if !outcome.added.is_empty() {
            log::info!(
                "pool {}: appended {} docs from the bm25 window: {}",
                outcome.pool.query_id,
                outcome.added.len(),
                outcome.added.join(", ")
            );
        }
        supplemented.push(outcome.pool);
    }
    Ok(supplemented)
}

pub fn rank(settings: &Settings, supplement: bool) -> Result<(), CliError> {
    let mut problems = Vec::new();
    let pools_path = require_path(&mut problems, "pools", &settings.pools, true);
    let cache_path = require_path(&mut problems, "cache", &settings.cache, true);
    let checkpoint_path = require_path(&mut problems, "checkpoint", &settings.checkpoint, true);
    let run_path = require_path(&mut problems, "run", &settings.run, false);
    let mut supplement_paths = None;
    if supplement {
        supplement_paths = Some((
            require_path(&mut problems, "corpus", &settings.corpus, true),
            require_path(&mut problems, "index", &settings.index, true),
            require_path(&mut problems, "qrels", &settings.qrels, true),
        ));
    }
    finish_validation("rank", problems)?;

    let cache = ReformulationCache::load(&cache_path)?;
    let model = ToyEncoderModel::load(&checkpoint_path)?;
    let mut pools = load_pools(&pools_path, None)?;
    if let Some((corpus_path, index_path, qrels_path)) = supplement_paths {
        let corpus = Corpus::load(&corpus_path)?;
        let index = LexicalIndex::load(&index_path)?;
        let judgments = JudgmentSet::load(&qrels_path)?;
        pools = apply_supplementation(
            &pools,
            &corpus,
            &index,
            &judgments,
            settings.rule,
            settings.seed,
        )?;
    }

    let tag = settings
        .tag
        .clone()
        .unwrap_or_else(|| format!("subfact-{}", settings.aggregator));
    let run = rank_pools(
        &pools,
        &cache,
        settings.mode,
        &model,
        settings.aggregator,
        &tag,
    )?;
    let header = artifact_header(
        "rank",
        settings.seed,
        &[
            ("aggregator", settings.aggregator.to_string()),
            ("mode", settings.mode.to_string()),
            ("supplemented", supplement.to_string()),
        ],
    );
    write_atomic(&run_path, format!("{header}{}", run.to_trec()).as_bytes())?;
    println!(
        "ranked {} pools with {} (mode {}) -> {}",
        pools.len(),
        settings.aggregator,
        settings.mode,
        run_path.display()
    );
    Ok(())
}

pub fn eval(settings: &Settings, supplement: bool) -> Result<(), CliError> {
    let mut problems = Vec::new();
    let run_path = require_path(&mut problems, "run", &settings.run, true);
    let qrels_path = require_path(&mut problems, "qrels", &settings.qrels, true);
    let pools_path = require_path(&mut problems, "pools", &settings.pools, true);
    let corpus_path = require_path(&mut problems, "corpus", &settings.corpus, true);
    let mut index_path = None;
    if supplement {
        index_path = Some(require_path(&mut problems, "index", &settings.index, true));
    }
    finish_validation("eval", problems)?;

    let run = RankedRun::load(&run_path)?;
    let judgments = JudgmentSet::load(&qrels_path)?;
    let corpus = Corpus::load(&corpus_path)?;
    let mut pools = load_pools(&pools_path, None)?;
    if let Some(index_path) = index_path {
        let index = LexicalIndex::load(&index_path)?;
        pools = apply_supplementation(
            &pools,
            &corpus,
            &index,
            &judgments,
            settings.rule,
            settings.seed,
        )?;
    }
    let query_types: BTreeMap<String, QueryType> = corpus
        .queries()
        .map(|case| (case.id.clone(), case.query_type()))
        .collect();
    let config = EvalConfig {
        rule: settings.rule,
        ..EvalConfig::default()
    };
    let report = evaluate_run(&run, &judgments, &pools, &query_types, &config)?;
    for warning in &report.warnings {
        log::warn!("{warning}");
    }

    println!(
        "run {:?}: {} queries, rule {}",
        run.tag,
        report.per_query.len(),
        settings.rule
    );
    for (metric, value) in &report.aggregate {
        println!("{metric:<8} {value:.4}");
    }
    for (query_type, metrics) in &report.by_query_type {
        let cells: Vec<String> = metrics
            .iter()
            .map(|(metric, value)| format!("{metric}={value:.4}"))
            .collect();
        println!("[{query_type}] {}", cells.join(" "));
    }
    if let Some(metrics_path) = &settings.metrics {
        let header = artifact_header(
            "eval",
            settings.seed,
            &[
                ("run", run.tag.clone()),
                ("rule", settings.rule.to_string()),
            ],
        );
        write_atomic(
            metrics_path,
            format!("{header}{}", report.to_csv()).as_bytes(),
        )?;
        println!("metrics: {}", metrics_path.display());
    }
    Ok(())
}

pub fn explain(
    settings: &Settings,
    query_id: &str,
    doc_id: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut problems = Vec::new();
    let cache_path = require_path(&mut problems, "cache", &settings.cache, true);
    let checkpoint_path = require_path(&mut problems, "checkpoint", &settings.checkpoint, true);
    let out: PathBuf = match out {
        Some(path) => path.to_path_buf(),
        None => {
            problems.push("out is not set (--out FILE)".to_string());
            PathBuf::new()
        }
    };
    finish_validation("explain", problems)?;

    let cache = ReformulationCache::load(&cache_path)?;
    let model = ToyEncoderModel::load(&checkpoint_path)?;
    let report = explain_pair(
        query_id,
        doc_id,
        &cache,
        settings.mode,
        &model,
        settings.aggregator,
    )?;
    let rendered = render_explanation(&report);
    let json = serde_json::to_string(&report).expect("report serializes");
    let header = artifact_header(
        "explain",
        settings.seed,
        &[("aggregator", settings.aggregator.to_string())],
    );
    write_atomic(&out, format!("{header}{json}\n\n{rendered}").as_bytes())?;
    print!("{rendered}");
    println!("explanation: {}", out.display());
    Ok(())
}

pub fn baseline(settings: &Settings, method: LexicalMethod) -> Result<(), CliError> {
    let mut problems = Vec::new();
    let corpus_path = require_path(&mut problems, "corpus", &settings.corpus, true);
    let pools_path = require_path(&mut problems, "pools", &settings.pools, true);
    let index_path = require_path(&mut problems, "index", &settings.index, true);
    let run_path = require_path(&mut problems, "run", &settings.run, false);
    finish_validation("baseline", problems)?;

    let corpus = Corpus::load(&corpus_path)?;
    let pools = load_pools(&pools_path, Some(&corpus))?;
    let index = LexicalIndex::load(&index_path)?;
    let tag = settings.tag.clone().unwrap_or_else(|| method.to_string());
    let mut run = RankedRun::new(&tag);
    for pool in &pools {
        let query = corpus.get(&pool.query_id).ok_or_else(|| {
            CliError::Data(format!("query {:?} is not in the corpus", pool.query_id))
        })?;
        let ranked = index.rank(method, query.fact(), &pool.candidate_ids)?;
        run.insert_query(&pool.query_id, ranked)?;
    }
    let header = artifact_header("baseline", settings.seed, &[("method", method.to_string())]);
    write_atomic(&run_path, format!("{header}{}", run.to_trec()).as_bytes())?;
    println!(
        "ranked {} pools with {method} -> {}",
        pools.len(),
        run_path.display()
    );
    Ok(())
}
