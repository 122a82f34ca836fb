//! End-to-end plumbing: reformulate a corpus through the cache, score and
//! rank candidate pools, emit match explanations, supplement pools, and
//! assemble training pairs from judgments.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{
    supplement_pool, CandidatePool, Corpus, CorpusError, DatasetRule, JudgmentSet,
    SupplementOutcome,
};
use crate::encoder::{EncodeError, SubfactEncoder};
use crate::eval::{EvalError, RankedRun};
use crate::llm::LlmClient;
use crate::reformulate::{
    collapse_to_single_vector, reformulate_with_cache, ArticleStore, CrimeArticleMap,
    ReformulateError, ReformulatedCase, ReformulationCache, ReformulationMode,
    ReformulationWarning,
};
use crate::scoring::{
    default_kernel_weights, default_kernels, kernel_pool, maxsim_sum, mean_aggregate,
    Aggregator, ExplanationReport, MeanMode, RelevanceScore, ScoringError, SimilarityMatrix,
};
use crate::text::fnv1a64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("case {case_id:?} is not in the reformulation cache; run reformulation first")]
    MissingReformulation { case_id: String },
    #[error("no lexical ranking available for query {query_id:?}")]
    MissingRanking { query_id: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Reformulate(#[from] ReformulateError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result of pushing a whole corpus through reformulation.
#[derive(Debug)]
pub struct ReformulationOutcome {
    pub cache: ReformulationCache,
    /// Cases reformulated by LLM round trips this run.
    pub fresh: usize,
    /// Cases served from the cache.
    pub cached: usize,
    pub warnings: Vec<ReformulationWarning>,
}

/// Reformulate every case of the corpus in id order, reusing and updating
/// the cache file at `cache_path` (written atomically once at the end).
pub fn reformulate_corpus(
    corpus: &Corpus,
    llm: &dyn LlmClient,
    store: &ArticleStore,
    map: &CrimeArticleMap,
    mode: ReformulationMode,
    cache_path: &Path,
) -> Result<ReformulationOutcome, PipelineError> {
    let mut cache = ReformulationCache::load_or_empty(cache_path)?;
    let mut warnings = Vec::new();
    let mut fresh = 0;
    let mut cached = 0;
    for case in corpus.iter() {
        let (_, was_fresh) =
            reformulate_with_cache(case, llm, store, map, mode, &mut cache, &mut warnings)?;
        if was_fresh {
            fresh += 1;
        } else {
            cached += 1;
        }
    }
    cache.save(cache_path)?;
    Ok(ReformulationOutcome {
        cache,
        fresh,
        cached,
        warnings,
    })
}

fn cached_case<'c>(
    cache: &'c ReformulationCache,
    mode: ReformulationMode,
    case_id: &str,
) -> Result<&'c ReformulatedCase, PipelineError> {
    cache
        .get(case_id, mode)
        .ok_or_else(|| PipelineError::MissingReformulation {
            case_id: case_id.to_string(),
        })
}

/// Score a similarity matrix with the chosen aggregator. The
/// single-vector variant expects a 1×1 matrix of collapsed cases.
fn aggregate_matrix(
    matrix: &SimilarityMatrix,
    aggregator: Aggregator,
) -> Result<RelevanceScore, ScoringError> {
    Ok(match aggregator {
        Aggregator::MaxSimSum => maxsim_sum(matrix),
        Aggregator::Mean => mean_aggregate(matrix, MeanMode::Grand),
        Aggregator::KernelPool => {
            kernel_pool(matrix, &default_kernels(), &default_kernel_weights())?
        }
        Aggregator::SingleVector => {
            // Callers collapse both cases first, so the matrix is 1x1 and
            // its only entry is the whole-case dot product.
            assert!(
                matrix.rows() == 1 && matrix.cols() == 1,
                "single-vector scoring requires collapsed cases"
            );
            RelevanceScore {
                value: matrix.get(0, 0),
                aggregator: Aggregator::SingleVector,
            }
        }
    })
}

/// Encode a query/document pair under the aggregator's representation and
/// build its similarity matrix. Single-vector collapses each case first.
fn pair_matrix(
    query: &ReformulatedCase,
    doc: &ReformulatedCase,
    encoder: &dyn SubfactEncoder,
    aggregator: Aggregator,
) -> Result<(SimilarityMatrix, Vec<String>, Vec<String>), PipelineError> {
    let (q_case, d_case) = if aggregator == Aggregator::SingleVector {
        (collapse_to_single_vector(query), collapse_to_single_vector(doc))
    } else {
        (query.clone(), doc.clone())
    };
    let q_embeds = encoder.encode_case(&q_case)?;
    let d_embeds = encoder.encode_case(&d_case)?;
    let matrix = SimilarityMatrix::new(&q_embeds, &d_embeds)?;
    let crimes = |case: &ReformulatedCase| -> Vec<String> {
        case.subfacts.iter().map(|s| s.crime.clone()).collect()
    };
    Ok((matrix, crimes(&q_case), crimes(&d_case)))
}

/// Relevance of one document to one query under the chosen aggregator.
pub fn score_pair(
    query: &ReformulatedCase,
    doc: &ReformulatedCase,
    encoder: &dyn SubfactEncoder,
    aggregator: Aggregator,
) -> Result<RelevanceScore, PipelineError> {
    let (matrix, _, _) = pair_matrix(query, doc, encoder, aggregator)?;
    Ok(aggregate_matrix(&matrix, aggregator)?)
}

/// Rank one candidate pool: descending score, ties by ascending doc id.
pub fn rank_pool(
    pool: &CandidatePool,
    cache: &ReformulationCache,
    mode: ReformulationMode,
    encoder: &dyn SubfactEncoder,
    aggregator: Aggregator,
) -> Result<Vec<(String, f64)>, PipelineError> {
    let query = cached_case(cache, mode, &pool.query_id)?;
    let mut scored = Vec::with_capacity(pool.candidate_ids.len());
    for doc_id in &pool.candidate_ids {
        let doc = cached_case(cache, mode, doc_id)?;
        let score = score_pair(query, doc, encoder, aggregator)?;
        scored.push((doc_id.clone(), score.value));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(scored)
}

/// Rank every pool into a run tagged `tag`.
pub fn rank_pools(
    pools: &[CandidatePool],
    cache: &ReformulationCache,
    mode: ReformulationMode,
    encoder: &dyn SubfactEncoder,
    aggregator: Aggregator,
    tag: &str,
) -> Result<RankedRun, PipelineError> {
    let mut run = RankedRun::new(tag);
    for pool in pools {
        let ranked = rank_pool(pool, cache, mode, encoder, aggregator)?;
        run.insert_query(&pool.query_id, ranked)?;
    }
    Ok(run)
}

/// Build the match explanation for one (query, document) pair.
pub fn explain_pair(
    query_id: &str,
    doc_id: &str,
    cache: &ReformulationCache,
    mode: ReformulationMode,
    encoder: &dyn SubfactEncoder,
    aggregator: Aggregator,
) -> Result<ExplanationReport, PipelineError> {
    let query = cached_case(cache, mode, query_id)?;
    let doc = cached_case(cache, mode, doc_id)?;
    let (matrix, q_crimes, d_crimes) = pair_matrix(query, doc, encoder, aggregator)?;
    let score = aggregate_matrix(&matrix, aggregator)?;
    Ok(ExplanationReport::build(
        query_id, doc_id, &matrix, &q_crimes, &d_crimes, score,
    )?)
}

/// Human-readable rendering of an explanation: the similarity matrix plus
/// one best-match line per query sub-fact.
pub fn render_explanation(report: &ExplanationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("query:      {}\n", report.query_id));
    out.push_str(&format!("document:   {}\n", report.doc_id));
    out.push_str(&format!("aggregator: {}\n", report.aggregator));
    out.push_str(&format!("score:      {:.6}\n", report.score));
    out.push_str("\nsimilarity matrix (rows: query sub-facts, cols: document sub-facts):\n");
    let cols = report.matrix.first().map_or(0, Vec::len);
    out.push_str("      ");
    for j in 1..=cols {
        out.push_str(&format!(" [{j}]    "));
    }
    out.push('\n');
    for (i, row) in report.matrix.iter().enumerate() {
        out.push_str(&format!("[{}]  ", i + 1));
        for value in row {
            out.push_str(&format!("{value:+.4} "));
        }
        out.push('\n');
    }
    out.push_str("\nbest matches:\n");
    for attr in &report.attributions {
        out.push_str(&format!(
            "  query [{}] {} -> doc [{}] {}: {:+.4}\n",
            attr.q_index, attr.q_crime, attr.d_index, attr.d_crime, attr.score
        ));
    }
    out
}

/// Seed for one query's supplementation draw, derived from the root seed
/// so per-query sampling is independent of pool iteration order.
pub fn per_query_seed(root_seed: u64, query_id: &str) -> u64 {
    root_seed ^ fnv1a64(query_id.as_bytes())
}

/// Apply pool supplementation to every pool, seeding each query's draw
/// from the root seed.
pub fn supplement_pools(
    pools: &[CandidatePool],
    judgments: &JudgmentSet,
    rule: DatasetRule,
    bm25_rankings: &BTreeMap<String, Vec<String>>,
    root_seed: u64,
) -> Result<Vec<SupplementOutcome>, PipelineError> {
    let mut outcomes = Vec::with_capacity(pools.len());
    for pool in pools {
        let ranking =
            bm25_rankings
                .get(&pool.query_id)
                .ok_or_else(|| PipelineError::MissingRanking {
                    query_id: pool.query_id.clone(),
                })?;
        outcomes.push(supplement_pool(
            pool,
            judgments,
            rule,
            ranking,
            per_query_seed(root_seed, &pool.query_id),
        )?);
    }
    Ok(outcomes)
}

/// Pair every judged-positive (query, document) whose two sides are both
/// reformulated, in (query, document) id order.
pub fn build_train_pairs(
    cache: &ReformulationCache,
    mode: ReformulationMode,
    judgments: &JudgmentSet,
    rule: DatasetRule,
) -> Result<Vec<crate::training::TrainPair>, PipelineError> {
    let mut pairs = Vec::new();
    for query_id in judgments.queries() {
        let positives: Vec<&str> = judgments
            .judged_docs(query_id)
            .filter(|(_, grade)| {
                crate::corpus::binarize_grade(*grade, rule).unwrap_or(false)
            })
            .map(|(doc_id, _)| doc_id)
            .collect();
        if positives.is_empty() {
            continue;
        }
        let query = cached_case(cache, mode, query_id)?;
        for doc_id in positives {
            let positive = cached_case(cache, mode, doc_id)?;
            pairs.push(crate::training::TrainPair {
                query: query.clone(),
                positive: positive.clone(),
            });
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RelevanceJudgment;
    use crate::encoder::{Embedding, ToyEncoderModel};
    use crate::reformulate::SubFact;

    fn rcase(id: &str, parts: &[(&str, &str)]) -> ReformulatedCase {
        ReformulatedCase {
            case_id: id.to_string(),
            subfacts: parts
                .iter()
                .map(|(crime, text)| SubFact {
                    crime: crime.to_string(),
                    cause: text.to_string(),
                    procedure: String::new(),
                    outcome: String::new(),
                    source_case_id: id.to_string(),
                })
                .collect(),
        }
    }

    fn cache_of(cases: &[(&ReformulatedCase, ReformulationMode)]) -> ReformulationCache {
        let mut cache = ReformulationCache::new();
        for (case, mode) in cases {
            cache.insert(*mode, (*case).clone());
        }
        cache
    }

    /// Hand-built unit embeddings keyed by case id, for exact-score tests.
    struct FixedEncoder {
        by_case: BTreeMap<String, Vec<Embedding>>,
    }

    impl FixedEncoder {
        fn new(entries: &[(&str, Vec<Vec<f64>>)]) -> Self {
            let by_case = entries
                .iter()
                .map(|(id, vecs)| {
                    (
                        id.to_string(),
                        vecs.iter()
                            .map(|v| Embedding { values: v.clone() })
                            .collect(),
                    )
                })
                .collect();
            Self { by_case }
        }
    }

    impl SubfactEncoder for FixedEncoder {
        fn dim(&self) -> usize {
            2
        }

        fn encode_case(&self, case: &ReformulatedCase) -> Result<Vec<Embedding>, EncodeError> {
            self.by_case
                .get(&case.case_id)
                .cloned()
                .ok_or_else(|| EncodeError::UnknownCase {
                    case_id: case.case_id.clone(),
                })
        }
    }

    fn pool(query_id: &str, docs: &[&str]) -> CandidatePool {
        CandidatePool {
            query_id: query_id.to_string(),
            candidate_ids: docs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn rank_pool_sorts_by_score_then_doc_id() {
        let q = rcase("q1", &[("a", "x"), ("b", "y")]);
        let d_two = rcase("d-two", &[("a", "x"), ("b", "y")]);
        let d_one = rcase("d-one", &[("a", "x")]);
        let cache = cache_of(&[
            (&q, ReformulationMode::Kgcr),
            (&d_two, ReformulationMode::Kgcr),
            (&d_one, ReformulationMode::Kgcr),
        ]);
        // Query sub-facts along axes; d-two matches both, d-one only one.
        let encoder = FixedEncoder::new(&[
            ("q1", vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            ("d-two", vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            ("d-one", vec![vec![1.0, 0.0]]),
        ]);
        let ranked = rank_pool(
            &pool("q1", &["d-one", "d-two"]),
            &cache,
            ReformulationMode::Kgcr,
            &encoder,
            Aggregator::MaxSimSum,
        )
        .unwrap();
        assert_eq!(ranked[0].0, "d-two");
        assert!((ranked[0].1 - 2.0).abs() < 1e-12);
        assert_eq!(ranked[1].0, "d-one");
        assert!((ranked[1].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_order_by_doc_id() {
        let q = rcase("q1", &[("a", "x")]);
        let da = rcase("db", &[("a", "x")]);
        let db = rcase("da", &[("a", "x")]);
        let cache = cache_of(&[
            (&q, ReformulationMode::Kgcr),
            (&da, ReformulationMode::Kgcr),
            (&db, ReformulationMode::Kgcr),
        ]);
        let encoder = FixedEncoder::new(&[
            ("q1", vec![vec![1.0, 0.0]]),
            ("da", vec![vec![1.0, 0.0]]),
            ("db", vec![vec![1.0, 0.0]]),
        ]);
        let ranked = rank_pool(
            &pool("q1", &["db", "da"]),
            &cache,
            ReformulationMode::Kgcr,
            &encoder,
            Aggregator::MaxSimSum,
        )
        .unwrap();
        assert_eq!(ranked[0].0, "da");
        assert_eq!(ranked[1].0, "db");
    }

    #[test]
    fn singleton_pool_ranks_its_doc_first() {
        let q = rcase("q1", &[("a", "x")]);
        let d = rcase("d1", &[("a", "x")]);
        let cache = cache_of(&[(&q, ReformulationMode::Kgcr), (&d, ReformulationMode::Kgcr)]);
        let encoder = FixedEncoder::new(&[
            ("q1", vec![vec![0.0, 1.0]]),
            ("d1", vec![vec![1.0, 0.0]]),
        ]);
        let run = rank_pools(
            &[pool("q1", &["d1"])],
            &cache,
            ReformulationMode::Kgcr,
            &encoder,
            Aggregator::MaxSimSum,
            "sys",
        )
        .unwrap();
        let ranking = run.ranking("q1").unwrap();
        assert_eq!(ranking.len(), 1);
        assert_eq!(ranking[0].0, "d1");
    }

    #[test]
    fn missing_cache_entries_are_named() {
        let q = rcase("q1", &[("a", "x")]);
        let cache = cache_of(&[(&q, ReformulationMode::Kgcr)]);
        let encoder = FixedEncoder::new(&[("q1", vec![vec![1.0, 0.0]])]);
        let err = rank_pool(
            &pool("q1", &["ghost"]),
            &cache,
            ReformulationMode::Kgcr,
            &encoder,
            Aggregator::MaxSimSum,
        )
        .unwrap_err();
        match err {
            PipelineError::MissingReformulation { case_id } => assert_eq!(case_id, "ghost"),
            other => panic!("unexpected error {other}"),
        }
        // The mode must match too: a KGCR cache does not serve NS ranking.
        let err = rank_pool(
            &pool("q1", &["q1"]),
            &cache,
            ReformulationMode::Ns,
            &encoder,
            Aggregator::MaxSimSum,
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::MissingReformulation { .. }));
    }

    #[test]
    fn single_vector_ranking_uses_collapsed_cases() {
        // Same toy model end to end: collapse merges bags before
        // normalization, so scores differ from per-sub-fact matching.
        let model = ToyEncoderModel::new(256, 16, 9);
        let q = rcase("q1", &[("a", "alpha beta"), ("b", "gamma delta")]);
        let d = rcase("d1", &[("a", "alpha beta")]);
        let cache = cache_of(&[(&q, ReformulationMode::Kgcr), (&d, ReformulationMode::Kgcr)]);
        let ranked = rank_pool(
            &pool("q1", &["d1"]),
            &cache,
            ReformulationMode::Kgcr,
            &model,
            Aggregator::SingleVector,
        )
        .unwrap();
        let q_vec = model
            .encode_text(&collapse_to_single_vector(&q).subfacts[0].full_text())
            .unwrap();
        let d_vec = model
            .encode_text(&collapse_to_single_vector(&d).subfacts[0].full_text())
            .unwrap();
        assert_eq!(ranked[0].1, q_vec.dot(&d_vec));
    }

    #[test]
    fn explanation_reports_diagonal_matches() {
        let q = rcase("q1", &[("robbery", "x"), ("harboring", "y")]);
        let d = rcase("d1", &[("robbery", "x"), ("harboring", "y")]);
        let cache = cache_of(&[(&q, ReformulationMode::Kgcr), (&d, ReformulationMode::Kgcr)]);
        let encoder = FixedEncoder::new(&[
            ("q1", vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            ("d1", vec![vec![0.8, 0.6], vec![-0.6, 0.8]]),
        ]);
        let report = explain_pair(
            "q1",
            "d1",
            &cache,
            ReformulationMode::Kgcr,
            &encoder,
            Aggregator::MaxSimSum,
        )
        .unwrap();
        assert_eq!(report.attributions.len(), 2);
        assert_eq!(
            (report.attributions[0].q_index, report.attributions[0].d_index),
            (1, 1)
        );
        assert_eq!(
            (report.attributions[1].q_index, report.attributions[1].d_index),
            (2, 2)
        );
        assert_eq!(report.attributions[0].q_crime, "robbery");
        assert_eq!(report.attributions[1].d_crime, "harboring");

        let text = render_explanation(&report);
        assert!(text.contains("query:      q1"));
        assert!(text.contains("aggregator: maxsim_sum"));
        assert!(text.contains("query [1] robbery -> doc [1] robbery"));
        assert!(text.lines().count() > 8);
    }

    #[test]
    fn per_query_seeds_differ_across_queries_and_roots() {
        let a = per_query_seed(7, "q1");
        let b = per_query_seed(7, "q2");
        let c = per_query_seed(8, "q1");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, per_query_seed(7, "q1"));
    }

    #[test]
    fn supplement_pools_requires_a_ranking_per_query() {
        let judgments = JudgmentSet::from_judgments([RelevanceJudgment {
            query_id: "q1".to_string(),
            doc_id: "d1".to_string(),
            grade: 3,
        }])
        .unwrap();
        let err = supplement_pools(
            &[pool("q1", &["d1"])],
            &judgments,
            DatasetRule::LeCaRD,
            &BTreeMap::new(),
            7,
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::MissingRanking { .. }));

        let ranking: Vec<String> = (0..200).map(|i| format!("r{i:03}")).collect();
        let rankings: BTreeMap<String, Vec<String>> =
            [("q1".to_string(), ranking)].into();
        let outcomes = supplement_pools(
            &[pool("q1", &["d1"])],
            &judgments,
            DatasetRule::LeCaRD,
            &rankings,
            7,
        )
        .unwrap();
        assert_eq!(outcomes[0].added.len(), 10);
        assert_eq!(outcomes[0].pool.candidate_ids.len(), 11);
        // Additions come from the rank 101-150 window.
        for doc in &outcomes[0].added {
            let n: usize = doc[1..].parse().unwrap();
            assert!((100..150).contains(&n), "{doc} outside window");
        }
    }

    #[test]
    fn train_pairs_cover_every_positive_judgment() {
        let q1 = rcase("q1", &[("a", "x")]);
        let q2 = rcase("q2", &[("b", "y")]);
        let d1 = rcase("d1", &[("a", "x")]);
        let d2 = rcase("d2", &[("b", "y")]);
        let d3 = rcase("d3", &[("a", "z")]);
        let cache = cache_of(&[
            (&q1, ReformulationMode::Kgcr),
            (&q2, ReformulationMode::Kgcr),
            (&d1, ReformulationMode::Kgcr),
            (&d2, ReformulationMode::Kgcr),
            (&d3, ReformulationMode::Kgcr),
        ]);
        let judgments = JudgmentSet::from_judgments([
            ("q1", "d1", 3u8),
            ("q1", "d3", 3),
            ("q1", "d2", 1),
            ("q2", "d2", 3),
        ]
        .map(|(q, d, g)| RelevanceJudgment {
            query_id: q.to_string(),
            doc_id: d.to_string(),
            grade: g,
        }))
        .unwrap();
        let pairs = build_train_pairs(
            &cache,
            ReformulationMode::Kgcr,
            &judgments,
            DatasetRule::LeCaRD,
        )
        .unwrap();
        let ids: Vec<(String, String)> = pairs
            .iter()
            .map(|p| (p.query.case_id.clone(), p.positive.case_id.clone()))
            .collect();
        assert_eq!(
            ids,
            vec![
                ("q1".to_string(), "d1".to_string()),
                ("q1".to_string(), "d3".to_string()),
                ("q2".to_string(), "d2".to_string()),
            ]
        );

        // A positive missing from the cache is an error, not a skip.
        let judgments = JudgmentSet::from_judgments([RelevanceJudgment {
            query_id: "q1".to_string(),
            doc_id: "ghost".to_string(),
            grade: 3,
        }])
        .unwrap();
        assert!(matches!(
            build_train_pairs(&cache, ReformulationMode::Kgcr, &judgments, DatasetRule::LeCaRD),
            Err(PipelineError::MissingReformulation { .. })
        ));
    }

    #[test]
    fn reformulate_corpus_is_cache_backed() {
        use crate::corpus::{CaseKind, LegalCase, Sections};
        use crate::llm::MockLlm;

        let dir = tempfile::tempdir().unwrap();
        let fixtures = dir.path().join("fixtures");
        std::fs::create_dir(&fixtures).unwrap();
        for id in ["c1", "c2"] {
            std::fs::write(
                fixtures.join(format!("{id}__extract.txt")),
                "theft\nArticle 264",
            )
            .unwrap();
            std::fs::write(
                fixtures.join(format!("{id}__summarize__theft.txt")),
                "Cause: a\nProcedure: b\nOutcome: c",
            )
            .unwrap();
        }
        let corpus = Corpus::from_cases(
            ["c1", "c2"]
                .iter()
                .map(|id| LegalCase {
                    id: id.to_string(),
                    kind: if *id == "c1" {
                        CaseKind::Query
                    } else {
                        CaseKind::Document
                    },
                    sections: Sections {
                        procedure: None,
                        fact: Some("the facts".to_string()),
                        reasoning: None,
                        decision: None,
                        tail: None,
                    },
                    query_type: None,
                })
                .collect(),
        )
        .unwrap();
        let store = ArticleStore::from_entries([(
            "Article 264".to_string(),
            "Theft provision".to_string(),
        )]);
        let map = CrimeArticleMap::from_entries(
            [("theft".to_string(), vec!["Article 264".to_string()])],
            &store,
        )
        .unwrap();
        let cache_path = dir.path().join("cache.jsonl");

        let llm = MockLlm::new(&fixtures);
        let first = reformulate_corpus(
            &corpus,
            &llm,
            &store,
            &map,
            ReformulationMode::Kgcr,
            &cache_path,
        )
        .unwrap();
        assert_eq!((first.fresh, first.cached), (2, 0));
        assert_eq!(llm.calls(), 4);

        // Second run over the persisted cache performs zero LLM calls.
        let llm2 = MockLlm::new(&fixtures);
        let second = reformulate_corpus(
            &corpus,
            &llm2,
            &store,
            &map,
            ReformulationMode::Kgcr,
            &cache_path,
        )
        .unwrap();
        assert_eq!((second.fresh, second.cached), (0, 2));
        assert_eq!(llm2.calls(), 0);
        assert_eq!(
            second.cache.get("c1", ReformulationMode::Kgcr),
            first.cache.get("c1", ReformulationMode::Kgcr)
        );
    }
}
