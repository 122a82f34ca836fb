//! Retrieval metrics (MAP, P@k, NDCG@k) over judged candidate pools, the
//! per-query-type breakdown, and TREC-format run files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{binarize_grade, CandidatePool, DatasetRule, JudgmentSet, QueryType};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {query_id:?} appears in the run but not in the pools")]
    QueryNotPooled { query_id: String },
    #[error("pooled query {query_id:?} is missing from the run")]
    MissingQuery { query_id: String },
    #[error("query {query_id:?}: ranked docs do not match the pool ({detail})")]
    DocMismatch { query_id: String, detail: String },
    #[error("query {query_id:?}: duplicate doc {doc_id:?} in ranking")]
    DuplicateDoc { query_id: String, doc_id: String },
    #[error("query {query_id:?}: score rises at rank {rank}")]
    ScoresIncrease { query_id: String, rank: usize },
    #[error("duplicate query {query_id:?} in run")]
    DuplicateQuery { query_id: String },
    #[error("id {id:?} contains whitespace, unusable in a run file")]
    IdWithWhitespace { id: String },
    #[error("run line {line}: {reason}")]
    TrecLine { line: usize, reason: String },
    #[error("query {query_id:?}: ranks are not contiguous from 1")]
    BadRanks { query_id: String },
    #[error("run mixes tags {first:?} and {other:?}")]
    MixedTags { first: String, other: String },
    #[error("run file is empty")]
    EmptyRun,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A system's ranked output: per query, docs in descending-score order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRun {
    pub tag: String,
    rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl RankedRun {
    pub fn new(tag: &str) -> Self {
        Self {
            tag: tag.to_string(),
            rankings: BTreeMap::new(),
        }
    }

    /// Add one query's ranking; scores must be non-increasing and doc ids
    /// unique.
    pub fn insert_query(
        &mut self,
        query_id: &str,
        ranked: Vec<(String, f64)>,
    ) -> Result<(), EvalError> {
        if query_id.chars().any(char::is_whitespace) {
            return Err(EvalError::IdWithWhitespace {
                id: query_id.to_string(),
            });
        }
        if self.rankings.contains_key(query_id) {
            return Err(EvalError::DuplicateQuery {
                query_id: query_id.to_string(),
            });
        }
        let mut seen = BTreeSet::new();
        for (rank0, (doc_id, score)) in ranked.iter().enumerate() {
            if doc_id.chars().any(char::is_whitespace) {
                return Err(EvalError::IdWithWhitespace { id: doc_id.clone() });
            }
            if !seen.insert(doc_id.as_str()) {
                return Err(EvalError::DuplicateDoc {
                    query_id: query_id.to_string(),
                    doc_id: doc_id.clone(),
                });
            }
            if rank0 > 0 && *score > ranked[rank0 - 1].1 {
                return Err(EvalError::ScoresIncrease {
                    query_id: query_id.to_string(),
                    rank: rank0 + 1,
                });
            }
        }
        self.rankings.insert(query_id.to_string(), ranked);
        Ok(())
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    pub fn ranking(&self, query_id: &str) -> Option<&[(String, f64)]> {
        self.rankings.get(query_id).map(Vec::as_slice)
    }

    /// Serialize as TREC six-column lines:
    /// `query_id Q0 doc_id rank score tag`.
    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (query_id, ranked) in &self.rankings {
            for (rank0, (doc_id, score)) in ranked.iter().enumerate() {
                out.push_str(&format!(
                    "{query_id} Q0 {doc_id} {rank} {score} {tag}\n",
                    rank = rank0 + 1,
                    tag = self.tag
                ));
            }
        }
        out
    }

    pub fn from_trec(content: &str) -> Result<Self, EvalError> {
        let mut tag: Option<String> = None;
        let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        for (idx, line) in content.lines().enumerate() {
            // `#` lines are provenance headers (tool, seed), not rows.
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let bad = |reason: &str| EvalError::TrecLine {
                line: lineno,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(bad(&format!("expected 6 columns, got {}", fields.len())));
            }
            if fields[1] != "Q0" {
                return Err(bad(&format!("column 2 is {:?}, expected \"Q0\"", fields[1])));
            }
            let rank: usize = fields[3].parse().map_err(|_| bad("bad rank"))?;
            let score: f64 = fields[4].parse().map_err(|_| bad("bad score"))?;
            match &tag {
                None => tag = Some(fields[5].to_string()),
                Some(t) if t != fields[5] => {
                    return Err(EvalError::MixedTags {
                        first: t.clone(),
                        other: fields[5].to_string(),
                    })
                }
                Some(_) => {}
            }
            rows.entry(fields[0].to_string())
                .or_default()
                .push((rank, fields[2].to_string(), score));
        }
        let tag = tag.ok_or(EvalError::EmptyRun)?;
        let mut run = RankedRun::new(&tag);
        for (query_id, mut entries) in rows {
            entries.sort_by_key(|(rank, _, _)| *rank);
            let contiguous = entries
                .iter()
                .enumerate()
                .all(|(i, (rank, _, _))| *rank == i + 1);
            if !contiguous {
                return Err(EvalError::BadRanks { query_id });
            }
            run.insert_query(
                &query_id,
                entries.into_iter().map(|(_, d, s)| (d, s)).collect(),
            )?;
        }
        Ok(run)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        crate::io::write_atomic(path, self.to_trec().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_trec(&fs::read_to_string(path)?)
    }
}

/// Fraction of the top k that is relevant (denominator is always k).
pub fn precision_at_k(ranking: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let hits = ranking
        .iter()
        .take(k)
        .filter(|d| positives.contains(*d))
        .count();
    hits as f64 / k as f64
}

/// Mean of precision-at-r over the relevant retrieved ranks, divided by
/// the number of pool positives. `None` when there are no positives.
pub fn average_precision(ranking: &[String], positives: &BTreeSet<String>) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, doc) in ranking.iter().enumerate() {
        if positives.contains(doc) {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Some(sum / positives.len() as f64)
}

/// Graded NDCG with linear gain and log2(r+1) discount. Docs absent from
/// `grades` count as grade 0; an all-zero ideal yields 0.
pub fn ndcg_at_k(ranking: &[String], grades: &BTreeMap<String, u8>, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let discount = |rank0: usize| ((rank0 + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, d)| f64::from(grades.get(d).copied().unwrap_or(0)) / discount(r))
        .sum();
    let mut ideal: Vec<u8> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, &g)| f64::from(g) / discount(r))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Anything worth surfacing that does not abort evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalWarning {
    /// Query ranked nothing; every metric reads 0.
    EmptyRanking { query_id: String },
    /// Query has no pool positives; excluded from MAP.
    NoPositives { query_id: String },
}

impl fmt::Display for EvalWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalWarning::EmptyRanking { query_id } => {
                write!(f, "query {query_id:?}: empty ranking, metrics read 0")
            }
            EvalWarning::NoPositives { query_id } => {
                write!(f, "query {query_id:?}: no pool positives, excluded from MAP")
            }
        }
    }
}

impl Serialize for EvalWarning {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Which metrics to compute and under which binarization rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalConfig {
    pub precision_k: usize,
    pub ndcg_ks: Vec<usize>,
    pub rule: DatasetRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            precision_k: 3,
            ndcg_ks: vec![3, 5, 10],
            rule: DatasetRule::LeCaRD,
        }
    }
}

/// Per-query metric values, their macro averages, and the query-type
/// breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
    pub by_query_type: BTreeMap<String, BTreeMap<String, f64>>,
    pub warnings: Vec<EvalWarning>,
}

impl MetricReport {
    /// Wide CSV: one row per query, then `ALL` and per-type average rows.
    pub fn to_csv(&self) -> String {
        let metrics: BTreeSet<&str> = self
            .per_query
            .values()
            .flat_map(|m| m.keys().map(String::as_str))
            .collect();
        let mut out = String::from("query_id");
        for m in &metrics {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        let row = |label: &str, values: &BTreeMap<String, f64>, out: &mut String| {
            out.push_str(label);
            for m in &metrics {
                out.push(',');
                if let Some(v) = values.get(*m) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        };
        for (query_id, values) in &self.per_query {
            row(query_id, values, &mut out);
        }
        row("ALL", &self.aggregate, &mut out);
        for (qt, values) in &self.by_query_type {
            row(&format!("type:{qt}"), values, &mut out);
        }
        out
    }
}

fn type_name(qt: QueryType) -> &'static str {
    match qt {
        QueryType::Common => "common",
        QueryType::Controversial => "controversial",
    }
}

/// Score a run against judged pools: every metric per query, macro
/// averages over the queries that define each metric, and per-query-type
/// sub-averages. Unjudged pooled docs count as grade 0.
pub fn evaluate_run(
    run: &RankedRun,
    judgments: &JudgmentSet,
    pools: &[CandidatePool],
    query_types: &BTreeMap<String, QueryType>,
    config: &EvalConfig,
) -> Result<MetricReport, EvalError> {
    let pooled: BTreeMap<&str, &CandidatePool> =
        pools.iter().map(|p| (p.query_id.as_str(), p)).collect();
    for query_id in run.queries() {
        if !pooled.contains_key(query_id) {
            return Err(EvalError::QueryNotPooled {
                query_id: query_id.to_string(),
            });
        }
    }

    let mut per_query: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for pool in pools {
        let ranked = run
            .ranking(&pool.query_id)
            .ok_or_else(|| EvalError::MissingQuery {
                query_id: pool.query_id.clone(),
            })?;
        let ranked_ids: Vec<String> = ranked.iter().map(|(d, _)| d.clone()).collect();
        let ranked_set: BTreeSet<&str> = ranked_ids.iter().map(String::as_str).collect();
        let pool_set: BTreeSet<&str> = pool.candidate_ids.iter().map(String::as_str).collect();
        if ranked_set != pool_set {
            let extra: Vec<&&str> = ranked_set.difference(&pool_set).collect();
            let missing: Vec<&&str> = pool_set.difference(&ranked_set).collect();
            return Err(EvalError::DocMismatch {
                query_id: pool.query_id.clone(),
                detail: format!("{} unpooled, {} unranked", extra.len(), missing.len()),
            });
        }

        let mut grades: BTreeMap<String, u8> = BTreeMap::new();
        let mut positives: BTreeSet<String> = BTreeSet::new();
        for doc in &pool.candidate_ids {
            let grade = judgments.grade(&pool.query_id, doc).unwrap_or(0);
            grades.insert(doc.clone(), grade);
            if binarize_grade(grade, config.rule).unwrap_or(false) {
                positives.insert(doc.clone());
            }
        }

        if ranked_ids.is_empty() {
            warnings.push(EvalWarning::EmptyRanking {
                query_id: pool.query_id.clone(),
            });
        }
        let mut values = BTreeMap::new();
        values.insert(
            format!("P@{}", config.precision_k),
            precision_at_k(&ranked_ids, &positives, config.precision_k),
        );
        match average_precision(&ranked_ids, &positives) {
            Some(ap) => {
                values.insert("MAP".to_string(), ap);
            }
            None => warnings.push(EvalWarning::NoPositives {
                query_id: pool.query_id.clone(),
            }),
        }
        for &k in &config.ndcg_ks {
            values.insert(format!("NDCG@{k}"), ndcg_at_k(&ranked_ids, &grades, k));
        }
        per_query.insert(pool.query_id.clone(), values);
    }

    let averages = |queries: &[&String]| -> BTreeMap<String, f64> {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for q in queries {
            for (metric, value) in &per_query[*q] {
                let slot = sums.entry(metric.clone()).or_insert((0.0, 0));
                slot.0 += value;
                slot.1 += 1;
            }
        }
        sums.into_iter()
            .map(|(metric, (sum, n))| (metric, sum / n as f64))
            .collect()
    };
    let all_queries: Vec<&String> = per_query.keys().collect();
    let aggregate = averages(&all_queries);

    let mut groups: BTreeMap<&'static str, Vec<&String>> = BTreeMap::new();
    for q in &all_queries {
        let qt = query_types.get(*q).copied().unwrap_or_default();
        groups.entry(type_name(qt)).or_default().push(q);
    }
    let by_query_type = groups
        .into_iter()
        .map(|(qt, queries)| (qt.to_string(), averages(&queries)))
        .collect();

    Ok(MetricReport {
        per_query,
        aggregate,
        by_query_type,
        warnings,
    })
}
