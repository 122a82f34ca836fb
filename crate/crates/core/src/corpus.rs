//! Case corpus: sectioned legal cases, relevance judgments, and candidate
//! pools, plus the pool-supplementation protocol used before evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Docs appended when a pool is supplemented.
pub const SUPPLEMENT_COUNT: usize = 10;
/// 1-based rank window the supplements are drawn from (inclusive).
pub const SUPPLEMENT_RANKS: (usize, usize) = (101, 150);

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate case id {id:?}")]
    DuplicateId { id: String },
    #[error("case {id:?}: {reason}")]
    InvalidCase { id: String, reason: String },
    #[error("qrels line {line}: {reason}")]
    QrelsLine { line: usize, reason: String },
    #[error("duplicate judgment for ({query_id:?}, {doc_id:?})")]
    DuplicateJudgment { query_id: String, doc_id: String },
    #[error("grade {grade} out of range [0, 3]")]
    GradeOutOfRange { grade: i64 },
    #[error("pool for {query_id:?}: {reason}")]
    InvalidPool { query_id: String, reason: String },
    #[error("ranking window holds only {eligible} eligible docs, need {needed}")]
    SupplementShortfall { eligible: usize, needed: usize },
    #[error("bm25 ranking must exclude the query case {query_id:?}")]
    QueryInRanking { query_id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether a case is an unadjudicated query or a completed document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Query,
    Document,
}

/// Query category used for the evaluation breakdown. Common queries look
/// like initial trials, controversial ones like retrials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryType {
    #[default]
    Common,
    Controversial,
}

/// The section map of a case. Missing sections stay absent rather than
/// empty so a query case can be told apart from a truncated document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sections {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub procedure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<String>,
}

/// A sectioned raw legal case, query or candidate document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalCase {
    pub id: String,
    pub kind: CaseKind,
    pub sections: Sections,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_type: Option<QueryType>,
}

impl LegalCase {
    /// The fact section, guaranteed non-empty for validated cases.
    pub fn fact(&self) -> &str {
        self.sections.fact.as_deref().unwrap_or("")
    }

    /// Effective query type; untagged queries default to common.
    pub fn query_type(&self) -> QueryType {
        self.query_type.unwrap_or_default()
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: &str| CorpusError::InvalidCase {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(CorpusError::InvalidCase {
                id: String::new(),
                reason: "empty id".into(),
            });
        }
        if self.fact().trim().is_empty() {
            return Err(invalid("missing or empty fact section"));
        }
        if self.kind == CaseKind::Query {
            let extra = [
                ("reasoning", &self.sections.reasoning),
                ("decision", &self.sections.decision),
                ("tail", &self.sections.tail),
            ];
            for (name, sec) in extra {
                if sec.as_deref().is_some_and(|s| !s.trim().is_empty()) {
                    return Err(invalid(&format!(
                        "query case carries a non-empty {name} section"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An immutable, id-indexed collection of cases.
#[derive(Debug, Clone)]
pub struct Corpus {
    cases: Vec<LegalCase>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_cases(cases: Vec<LegalCase>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(cases.len());
        for (i, case) in cases.iter().enumerate() {
            case.validate()?;
            if by_id.insert(case.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    id: case.id.clone(),
                });
            }
        }
        Ok(Self { cases, by_id })
    }

    /// Load a JSON Lines corpus file, one case object per line.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let content = fs::read_to_string(path)?;
        let parsed: Vec<(usize, LegalCase)> = crate::io::parse_jsonl(&content)
            .map_err(|(line, source)| CorpusError::Parse { line, source })?;
        Self::from_cases(parsed.into_iter().map(|(_, c)| c).collect())
    }

    pub fn get(&self, id: &str) -> Option<&LegalCase> {
        self.by_id.get(id).map(|&i| &self.cases[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LegalCase> {
        self.cases.iter()
    }

    pub fn queries(&self) -> impl Iterator<Item = &LegalCase> {
        self.cases.iter().filter(|c| c.kind == CaseKind::Query)
    }

    pub fn documents(&self) -> impl Iterator<Item = &LegalCase> {
        self.cases.iter().filter(|c| c.kind == CaseKind::Document)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Serialize back to JSON Lines in load order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for case in &self.cases {
            out.push_str(&serde_json::to_string(case).expect("case serializes"));
            out.push('\n');
        }
        out
    }
}

/// Grade-to-binary rule; the two benchmark protocols differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRule {
    /// Positive iff grade = 3.
    LeCaRD,
    /// Positive iff grade >= 2.
    LeCaRDv2,
}

impl fmt::Display for DatasetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetRule::LeCaRD => write!(f, "lecard"),
            DatasetRule::LeCaRDv2 => write!(f, "lecardv2"),
        }
    }
}

impl std::str::FromStr for DatasetRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lecard" => Ok(DatasetRule::LeCaRD),
            "lecardv2" => Ok(DatasetRule::LeCaRDv2),
            other => Err(format!(
                "unknown dataset rule {other:?}; expected lecard or lecardv2"
            )),
        }
    }
}

/// Map a 0-3 relevance grade to binary under the given rule.
pub fn binarize_grade(grade: u8, rule: DatasetRule) -> Result<bool, CorpusError> {
    if grade > 3 {
        return Err(CorpusError::GradeOutOfRange {
            grade: i64::from(grade),
        });
    }
    Ok(match rule {
        DatasetRule::LeCaRD => grade == 3,
        DatasetRule::LeCaRDv2 => grade >= 2,
    })
}

/// A single graded judgment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub doc_id: String,
    pub grade: u8,
}

/// All judgments, indexed per query. Iteration order is deterministic.
#[derive(Debug, Clone, Default)]
pub struct JudgmentSet {
    by_query: BTreeMap<String, BTreeMap<String, u8>>,
}

impl JudgmentSet {
    pub fn from_judgments(
        judgments: impl IntoIterator<Item = RelevanceJudgment>,
    ) -> Result<Self, CorpusError> {
        let mut by_query: BTreeMap<String, BTreeMap<String, u8>> = BTreeMap::new();
        for j in judgments {
            if j.grade > 3 {
                return Err(CorpusError::GradeOutOfRange {
                    grade: i64::from(j.grade),
                });
            }
            let prev = by_query
                .entry(j.query_id.clone())
                .or_default()
                .insert(j.doc_id.clone(), j.grade);
            if prev.is_some() {
                return Err(CorpusError::DuplicateJudgment {
                    query_id: j.query_id,
                    doc_id: j.doc_id,
                });
            }
        }
        Ok(Self { by_query })
    }

    /// Load tab-separated "query_id<TAB>doc_id<TAB>grade" lines, no header.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let content = fs::read_to_string(path)?;
        let mut judgments = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut parts = line.split('\t');
            let (q, d, g) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(q), Some(d), Some(g), None) => (q, d, g),
                _ => {
                    return Err(CorpusError::QrelsLine {
                        line: lineno,
                        reason: "expected exactly 3 tab-separated fields".into(),
                    })
                }
            };
            let grade: u8 = g.trim().parse().map_err(|_| CorpusError::QrelsLine {
                line: lineno,
                reason: format!("bad grade {g:?}"),
            })?;
            judgments.push(RelevanceJudgment {
                query_id: q.to_string(),
                doc_id: d.to_string(),
                grade,
            });
        }
        Self::from_judgments(judgments)
    }

    /// Grade for a pair; unjudged pairs are None (treated as grade 0 by
    /// the evaluation protocol).
    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u8> {
        self.by_query.get(query_id)?.get(doc_id).copied()
    }

    pub fn is_positive(&self, query_id: &str, doc_id: &str, rule: DatasetRule) -> bool {
        self.grade(query_id, doc_id)
            .map(|g| binarize_grade(g, rule).unwrap_or(false))
            .unwrap_or(false)
    }

    pub fn judged_docs(&self, query_id: &str) -> impl Iterator<Item = (&str, u8)> {
        self.by_query
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, &g)| (d.as_str(), g)))
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }
}

/// The fixed judged candidate set ranked for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub query_id: String,
    pub candidate_ids: Vec<String>,
}

impl CandidatePool {
    fn validate(&self, corpus: Option<&Corpus>) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for id in &self.candidate_ids {
            if !seen.insert(id.as_str()) {
                return Err(CorpusError::InvalidPool {
                    query_id: self.query_id.clone(),
                    reason: format!("duplicate candidate {id:?}"),
                });
            }
            if let Some(corpus) = corpus {
                if !corpus.contains(id) {
                    return Err(CorpusError::InvalidPool {
                        query_id: self.query_id.clone(),
                        reason: format!("candidate {id:?} not found in the corpus"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Load pools from JSON Lines; candidate ids must resolve in `corpus`.
pub fn load_pools(path: &Path, corpus: Option<&Corpus>) -> Result<Vec<CandidatePool>, CorpusError> {
    let content = fs::read_to_string(path)?;
    let parsed: Vec<(usize, CandidatePool)> = crate::io::parse_jsonl(&content)
        .map_err(|(line, source)| CorpusError::Parse { line, source })?;
    let pools: Vec<CandidatePool> = parsed.into_iter().map(|(_, p)| p).collect();
    for pool in &pools {
        pool.validate(corpus)?;
    }
    Ok(pools)
}

pub fn pools_to_jsonl(pools: &[CandidatePool]) -> String {
    let mut out = String::new();
    for p in pools {
        out.push_str(&serde_json::to_string(p).expect("pool serializes"));
        out.push('\n');
    }
    out
}

/// Outcome of the supplementation check for one pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupplementOutcome {
    pub pool: CandidatePool,
    /// Doc ids appended by this call, in sampling order. Empty when the
    /// pool already held a non-positive candidate.
    pub added: Vec<String>,
}

/// If every pooled candidate is positive under `rule`, append
/// [`SUPPLEMENT_COUNT`] docs sampled uniformly without replacement (seeded)
/// from ranks 101-150 of `bm25_ranking`, skipping docs already pooled.
/// Existing candidates keep their order.
pub fn supplement_pool(
    pool: &CandidatePool,
    judgments: &JudgmentSet,
    rule: DatasetRule,
    bm25_ranking: &[String],
    seed: u64,
) -> Result<SupplementOutcome, CorpusError> {
    if bm25_ranking.contains(&pool.query_id) {
        return Err(CorpusError::QueryInRanking {
            query_id: pool.query_id.clone(),
        });
    }
    let all_positive = pool
        .candidate_ids
        .iter()
        .all(|d| judgments.is_positive(&pool.query_id, d, rule));
    if !all_positive {
        return Ok(SupplementOutcome {
            pool: pool.clone(),
            added: Vec::new(),
        });
    }

    let (lo, hi) = SUPPLEMENT_RANKS;
    let pooled: HashSet<&str> = pool.candidate_ids.iter().map(String::as_str).collect();
    let window_end = hi.min(bm25_ranking.len());
    let eligible: Vec<&String> = if window_end >= lo {
        bm25_ranking[lo - 1..window_end]
            .iter()
            .filter(|d| !pooled.contains(d.as_str()))
            .collect()
    } else {
        Vec::new()
    };
    if eligible.len() < SUPPLEMENT_COUNT {
        return Err(CorpusError::SupplementShortfall {
            eligible: eligible.len(),
            needed: SUPPLEMENT_COUNT,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, eligible.len(), SUPPLEMENT_COUNT);
    let added: Vec<String> = picks.iter().map(|i| eligible[i].clone()).collect();

    let mut pool = pool.clone();
    pool.candidate_ids.extend(added.iter().cloned());
    Ok(SupplementOutcome { pool, added })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn doc(id: &str, fact: &str) -> LegalCase {
        LegalCase {
            id: id.into(),
            kind: CaseKind::Document,
            sections: Sections {
                procedure: Some("procedure".into()),
                fact: Some(fact.into()),
                reasoning: Some("reasoning".into()),
                decision: Some("decision".into()),
                tail: Some("tail".into()),
            },
            query_type: None,
        }
    }

    fn query(id: &str, fact: &str) -> LegalCase {
        LegalCase {
            id: id.into(),
            kind: CaseKind::Query,
            sections: Sections {
                procedure: Some("procedure".into()),
                fact: Some(fact.into()),
                ..Sections::default()
            },
            query_type: None,
        }
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_parses_valid_lines() {
        let f = write_temp(concat!(
            "{\"id\":\"d1\",\"kind\":\"document\",\"sections\":{\"fact\":\"the fact\"}}\n",
            "{\"id\":\"q1\",\"kind\":\"query\",\"sections\":{\"procedure\":\"p\",\"fact\":\"f\"},\"query_type\":\"controversial\"}\n",
        ));
        let corpus = Corpus::load(f.path()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.get("q1").unwrap().query_type(), QueryType::Controversial);
        assert_eq!(corpus.get("d1").unwrap().query_type(), QueryType::Common);
    }

    #[test]
    fn load_rejects_missing_fact() {
        let f = write_temp("{\"id\":\"d1\",\"kind\":\"document\",\"sections\":{\"procedure\":\"p\"}}\n");
        let err = Corpus::load(f.path()).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidCase { ref id, .. } if id == "d1"), "{err}");
    }

    #[test]
    fn load_rejects_duplicate_id() {
        let f = write_temp(concat!(
            "{\"id\":\"c1\",\"kind\":\"document\",\"sections\":{\"fact\":\"a\"}}\n",
            "{\"id\":\"c1\",\"kind\":\"document\",\"sections\":{\"fact\":\"b\"}}\n",
        ));
        let err = Corpus::load(f.path()).unwrap_err();
        assert!(err.to_string().contains("c1"), "{err}");
        assert!(matches!(err, CorpusError::DuplicateId { .. }));
    }

    #[test]
    fn load_names_the_bad_line() {
        let f = write_temp("{\"id\":\"d1\",\"kind\":\"document\",\"sections\":{\"fact\":\"a\"}}\n{oops\n");
        match Corpus::load(f.path()).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn query_case_must_not_carry_decision() {
        let mut q = query("q1", "f");
        q.sections.decision = Some("guilty".into());
        assert!(Corpus::from_cases(vec![q]).is_err());
        // Empty strings are tolerated as "absent".
        let mut q = query("q2", "f");
        q.sections.tail = Some(String::new());
        assert!(Corpus::from_cases(vec![q]).is_ok());
    }

    #[test]
    fn corpus_round_trips_through_jsonl() {
        let cases = vec![query("q1", "fact q"), doc("d1", "fact d")];
        let corpus = Corpus::from_cases(cases.clone()).unwrap();
        let f = write_temp(&corpus.to_jsonl());
        let reloaded = Corpus::load(f.path()).unwrap();
        let round: Vec<LegalCase> = reloaded.iter().cloned().collect();
        assert_eq!(round, cases);
    }

    #[test]
    fn binarize_follows_both_rules() {
        assert!(binarize_grade(3, DatasetRule::LeCaRD).unwrap());
        assert!(!binarize_grade(2, DatasetRule::LeCaRD).unwrap());
        assert!(binarize_grade(2, DatasetRule::LeCaRDv2).unwrap());
        assert!(binarize_grade(3, DatasetRule::LeCaRDv2).unwrap());
        assert!(!binarize_grade(1, DatasetRule::LeCaRDv2).unwrap());
        assert!(binarize_grade(4, DatasetRule::LeCaRD).is_err());
    }

    #[test]
    fn qrels_load_and_dedup() {
        let f = write_temp("q1\td1\t3\nq1\td2\t0\n");
        let j = JudgmentSet::load(f.path()).unwrap();
        assert_eq!(j.grade("q1", "d1"), Some(3));
        assert_eq!(j.grade("q1", "d3"), None);

        let f = write_temp("q1\td1\t3\nq1\td1\t2\n");
        assert!(matches!(
            JudgmentSet::load(f.path()).unwrap_err(),
            CorpusError::DuplicateJudgment { .. }
        ));

        let f = write_temp("q1\td1\t9\n");
        assert!(JudgmentSet::load(f.path()).is_err());
    }

    fn judged(pairs: &[(&str, &str, u8)]) -> JudgmentSet {
        JudgmentSet::from_judgments(pairs.iter().map(|&(q, d, g)| RelevanceJudgment {
            query_id: q.into(),
            doc_id: d.into(),
            grade: g,
        }))
        .unwrap()
    }

    fn ranking(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn supplement_adds_ten_from_the_window() {
        let pool = CandidatePool {
            query_id: "q1".into(),
            candidate_ids: (1..=5).map(|i| format!("p{i}")).collect(),
        };
        let judgments = judged(&[
            ("q1", "p1", 3),
            ("q1", "p2", 3),
            ("q1", "p3", 3),
            ("q1", "p4", 3),
            ("q1", "p5", 3),
        ]);
        let out =
            supplement_pool(&pool, &judgments, DatasetRule::LeCaRD, &ranking(200), 7).unwrap();
        assert_eq!(out.pool.candidate_ids.len(), 15);
        assert_eq!(out.added.len(), 10);
        assert_eq!(&out.pool.candidate_ids[..5], &pool.candidate_ids[..]);
        let window: HashSet<String> = ranking(200)[100..150].iter().cloned().collect();
        for d in &out.added {
            assert!(window.contains(d), "{d} outside ranks 101-150");
        }
        // No duplicates among additions.
        let uniq: HashSet<&String> = out.added.iter().collect();
        assert_eq!(uniq.len(), 10);
    }

    #[test]
    fn supplement_skips_pools_with_a_negative() {
        let pool = CandidatePool {
            query_id: "q1".into(),
            candidate_ids: vec!["p1".into(), "p2".into()],
        };
        let judgments = judged(&[("q1", "p1", 3), ("q1", "p2", 1)]);
        let out =
            supplement_pool(&pool, &judgments, DatasetRule::LeCaRD, &ranking(200), 7).unwrap();
        assert_eq!(out.pool, pool);
        assert!(out.added.is_empty());
    }

    #[test]
    fn supplement_reports_shortfall() {
        let pool = CandidatePool {
            query_id: "q1".into(),
            candidate_ids: vec!["p1".into()],
        };
        let judgments = judged(&[("q1", "p1", 3)]);
        match supplement_pool(&pool, &judgments, DatasetRule::LeCaRD, &ranking(105), 7) {
            Err(CorpusError::SupplementShortfall { eligible, needed }) => {
                assert_eq!((eligible, needed), (5, 10));
            }
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    #[test]
    fn supplement_is_deterministic_and_idempotent() {
        let pool = CandidatePool {
            query_id: "q1".into(),
            candidate_ids: vec!["p1".into()],
        };
        let judgments = judged(&[("q1", "p1", 3)]);
        let rk = ranking(200);
        let a = supplement_pool(&pool, &judgments, DatasetRule::LeCaRD, &rk, 7).unwrap();
        let b = supplement_pool(&pool, &judgments, DatasetRule::LeCaRD, &rk, 7).unwrap();
        assert_eq!(a, b);
        // Added docs are unjudged, hence non-positive: a second pass keeps
        // the pool unchanged.
        let again = supplement_pool(&a.pool, &judgments, DatasetRule::LeCaRD, &rk, 7).unwrap();
        assert_eq!(again.pool, a.pool);
        assert!(again.added.is_empty());
    }

    #[test]
    fn supplement_rejects_query_in_ranking() {
        let pool = CandidatePool {
            query_id: "q1".into(),
            candidate_ids: vec![],
        };
        let judgments = JudgmentSet::default();
        let mut rk = ranking(200);
        rk[0] = "q1".into();
        assert!(matches!(
            supplement_pool(&pool, &judgments, DatasetRule::LeCaRD, &rk, 7),
            Err(CorpusError::QueryInRanking { .. })
        ));
    }
}
