//! Lexical baseline rankers: Okapi BM25 and ltc-weighted TF-IDF over an
//! inverted index of document fact sections. BM25 also feeds pool
//! supplementation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::text::tokenize;

/// Bump when the on-disk index layout changes.
pub const INDEX_FORMAT_VERSION: u32 = 1;
/// Okapi defaults.
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("unknown document {doc_id:?}")]
    UnknownDoc { doc_id: String },
    #[error("duplicate document {doc_id:?}")]
    DuplicateDoc { doc_id: String },
    #[error("index holds no documents")]
    EmptyIndex,
    #[error("index has zero average document length")]
    DegenerateIndex,
    #[error("index format version {found}, expected {expected}")]
    FormatVersion { found: u32, expected: u32 },
    #[error("bad index file: {reason}")]
    BadIndexFile { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which lexical ranker to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexicalMethod {
    Bm25,
    TfIdf,
}

impl FromStr for LexicalMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bm25" => Ok(LexicalMethod::Bm25),
            "tfidf" => Ok(LexicalMethod::TfIdf),
            other => Err(format!("unknown method {other:?}; expected bm25 or tfidf")),
        }
    }
}

impl fmt::Display for LexicalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LexicalMethod::Bm25 => "bm25",
            LexicalMethod::TfIdf => "tfidf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct DocEntry {
    len: usize,
    tf: BTreeMap<String, usize>,
}

/// Immutable term statistics over the indexed documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalIndex {
    format_version: u32,
    total_docs: usize,
    avg_doc_len: f64,
    doc_freq: BTreeMap<String, usize>,
    docs: BTreeMap<String, DocEntry>,
}

impl LexicalIndex {
    /// Index (doc id, text) pairs; tokenization matches the encoder's
    /// featurizer so lexical and neural pipelines see one token stream.
    pub fn build_from_docs<'a>(
        docs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, BaselineError> {
        let mut entries: BTreeMap<String, DocEntry> = BTreeMap::new();
        for (id, text) in docs {
            let tokens = tokenize(text);
            let mut tf: BTreeMap<String, usize> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_insert(0) += 1;
            }
            let entry = DocEntry {
                len: tokens.len(),
                tf,
            };
            if entries.insert(id.to_string(), entry).is_some() {
                return Err(BaselineError::DuplicateDoc {
                    doc_id: id.to_string(),
                });
            }
        }
        if entries.is_empty() {
            return Err(BaselineError::EmptyIndex);
        }
        let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut total_len = 0usize;
        for entry in entries.values() {
            total_len += entry.len;
            for term in entry.tf.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
        }
        let total_docs = entries.len();
        let avg_doc_len = total_len as f64 / total_docs as f64;
        if avg_doc_len <= 0.0 {
            return Err(BaselineError::DegenerateIndex);
        }
        Ok(Self {
            format_version: INDEX_FORMAT_VERSION,
            total_docs,
            avg_doc_len,
            doc_freq,
            docs: entries,
        })
    }

    /// Index a corpus's documents over their fact sections.
    pub fn build(corpus: &Corpus) -> Result<Self, BaselineError> {
        Self::build_from_docs(corpus.documents().map(|d| (d.id.as_str(), d.fact())))
    }

    pub fn total_docs(&self) -> usize {
        self.total_docs
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.docs.contains_key(doc_id)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    fn entry(&self, doc_id: &str) -> Result<&DocEntry, BaselineError> {
        self.docs.get(doc_id).ok_or_else(|| BaselineError::UnknownDoc {
            doc_id: doc_id.to_string(),
        })
    }

    fn df(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    /// Smoothed non-negative idf: ln(1 + (N - df + 0.5) / (df + 0.5)).
    fn bm25_idf(&self, term: &str) -> f64 {
        let n = self.total_docs as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Okapi BM25 over the unique query terms.
    pub fn bm25_score(
        &self,
        query_text: &str,
        doc_id: &str,
        k1: f64,
        b: f64,
    ) -> Result<f64, BaselineError> {
        let entry = self.entry(doc_id)?;
        let terms: BTreeSet<String> = tokenize(query_text).into_iter().collect();
        let dl = entry.len as f64;
        let mut score = 0.0;
        for term in &terms {
            let tf = entry.tf.get(term).copied().unwrap_or(0) as f64;
            if tf == 0.0 {
                continue;
            }
            let denom = tf + k1 * (1.0 - b + b * dl / self.avg_doc_len);
            score += self.bm25_idf(term) * tf * (k1 + 1.0) / denom;
        }
        Ok(score)
    }

    /// ltc weight: (1 + ln tf) * ln(N / df). Terms absent from the corpus
    /// weigh 0.
    fn ltc_weight(&self, term: &str, tf: usize) -> f64 {
        let df = self.df(term);
        if tf == 0 || df == 0 {
            return 0.0;
        }
        (1.0 + (tf as f64).ln()) * (self.total_docs as f64 / df as f64).ln()
    }

    /// Cosine similarity of ltc-weighted query and document vectors.
    /// A zero-norm vector on either side scores 0.
    pub fn tfidf_score(&self, query_text: &str, doc_id: &str) -> Result<f64, BaselineError> {
        let entry = self.entry(doc_id)?;
        let mut q_tf: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokenize(query_text) {
            *q_tf.entry(t).or_insert(0) += 1;
        }
        let q_weights: BTreeMap<&str, f64> = q_tf
            .iter()
            .map(|(t, &tf)| (t.as_str(), self.ltc_weight(t, tf)))
            .collect();
        let d_weights: BTreeMap<&str, f64> = entry
            .tf
            .iter()
            .map(|(t, &tf)| (t.as_str(), self.ltc_weight(t, tf)))
            .collect();
        let norm = |w: &BTreeMap<&str, f64>| w.values().map(|v| v * v).sum::<f64>().sqrt();
        let (qn, dn) = (norm(&q_weights), norm(&d_weights));
        if qn == 0.0 || dn == 0.0 {
            return Ok(0.0);
        }
        let dot: f64 = q_weights
            .iter()
            .filter_map(|(t, qw)| d_weights.get(t).map(|dw| qw * dw))
            .sum();
        Ok(dot / (qn * dn))
    }

    fn score(
        &self,
        method: LexicalMethod,
        query_text: &str,
        doc_id: &str,
    ) -> Result<f64, BaselineError> {
        match method {
            LexicalMethod::Bm25 => self.bm25_score(query_text, doc_id, BM25_K1, BM25_B),
            LexicalMethod::TfIdf => self.tfidf_score(query_text, doc_id),
        }
    }

    /// Score and sort the given candidates: descending score, ties by
    /// ascending doc id.
    pub fn rank(
        &self,
        method: LexicalMethod,
        query_text: &str,
        candidates: &[String],
    ) -> Result<Vec<(String, f64)>, BaselineError> {
        let mut scored = Vec::with_capacity(candidates.len());
        for id in candidates {
            scored.push((id.clone(), self.score(method, query_text, id)?));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite scores")
                .then_with(|| a.0.cmp(&b.0))
        });
        Ok(scored)
    }

    /// Rank every indexed document except `exclude_id`; used to build the
    /// full ranking the pool-supplementation window reads from.
    pub fn rank_all(
        &self,
        method: LexicalMethod,
        query_text: &str,
        exclude_id: Option<&str>,
    ) -> Result<Vec<(String, f64)>, BaselineError> {
        let candidates: Vec<String> = self
            .docs
            .keys()
            .filter(|id| Some(id.as_str()) != exclude_id)
            .cloned()
            .collect();
        self.rank(method, query_text, &candidates)
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        let json = serde_json::to_string(self).expect("index serializes");
        crate::io::write_atomic(path, json.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let content = fs::read_to_string(path)?;
        let index: Self =
            serde_json::from_str(&content).map_err(|e| BaselineError::BadIndexFile {
                reason: e.to_string(),
            })?;
        if index.format_version != INDEX_FORMAT_VERSION {
            return Err(BaselineError::FormatVersion {
                found: index.format_version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        if index.total_docs == 0 || index.docs.is_empty() {
            return Err(BaselineError::EmptyIndex);
        }
        if index.avg_doc_len <= 0.0 {
            return Err(BaselineError::DegenerateIndex);
        }
        if index.doc_freq.values().any(|&df| df > index.total_docs) {
            return Err(BaselineError::BadIndexFile {
                reason: "document frequency exceeds document count".into(),
            });
        }
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn index(docs: &[(&str, &str)]) -> LexicalIndex {
        LexicalIndex::build_from_docs(docs.iter().copied()).unwrap()
    }

    const LN_2: f64 = std::f64::consts::LN_2;

    #[test]
    fn bm25_matches_the_hand_computed_value() {
        let idx = index(&[("d1", "a a b"), ("d2", "c")]);
        // idf(a) = ln 2; tf 2, dl 3, avgdl 2:
        // ln2 * 2*2.2 / (2 + 1.2*(0.25 + 0.75*1.5)) = ln2 * 4.4/3.65.
        let expect = LN_2 * 4.4 / 3.65;
        assert!((expect - 0.8355746834147286).abs() < 1e-15);
        let got = idx.bm25_score("a", "d1", BM25_K1, BM25_B).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got}");
        assert_eq!(idx.bm25_score("a", "d2", BM25_K1, BM25_B).unwrap(), 0.0);
        let ranked = idx
            .rank(LexicalMethod::Bm25, "a", &["d1".into(), "d2".into()])
            .unwrap();
        assert_eq!(ranked[0].0, "d1");
        assert_eq!(ranked[1].0, "d2");
    }

    #[test]
    fn idf_stays_positive_when_every_doc_has_the_term() {
        let idx = index(&[("d1", "a x"), ("d2", "a y")]);
        // df = N = 2: idf = ln(1 + 0.5/2.5) = ln 1.2.
        let idf = idx.bm25_idf("a");
        assert!((idf - 0.1823215567939546).abs() < 1e-15);
        assert!(idx.bm25_score("a", "d1", BM25_K1, BM25_B).unwrap() > 0.0);
    }

    #[test]
    fn bm25_grows_with_term_frequency() {
        let idx = index(&[("once", "a b b"), ("twice", "a a b"), ("other", "c c c")]);
        let low = idx.bm25_score("a", "once", BM25_K1, BM25_B).unwrap();
        let high = idx.bm25_score("a", "twice", BM25_K1, BM25_B).unwrap();
        assert!(high > low);
    }

    #[test]
    fn unrelated_documents_leave_term_stats_alone() {
        let small = index(&[("d1", "a a b"), ("d2", "c")]);
        let grown = index(&[("d1", "a a b"), ("d2", "c"), ("d3", "z z q")]);
        assert_eq!(small.docs["d1"], grown.docs["d1"]);
        assert_eq!(small.df("a"), grown.df("a"));
        // Scores still shift through N and avgdl, by design.
        assert_ne!(
            small.bm25_score("a", "d1", BM25_K1, BM25_B).unwrap(),
            grown.bm25_score("a", "d1", BM25_K1, BM25_B).unwrap()
        );
    }

    #[test]
    fn tfidf_parallel_vectors_score_one() {
        let idx = index(&[("d1", "x"), ("d2", "y")]);
        let s = idx.tfidf_score("x", "d1").unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tfidf_disjoint_vocabulary_scores_zero() {
        let idx = index(&[("d1", "x"), ("d2", "y")]);
        assert_eq!(idx.tfidf_score("z", "d1").unwrap(), 0.0);
    }

    #[test]
    fn tfidf_matches_the_hand_computed_toy_corpus() {
        let idx = index(&[("d1", "x x y"), ("d2", "x z"), ("d3", "w")]);
        let s1 = idx.tfidf_score("x y", "d1").unwrap();
        let s2 = idx.tfidf_score("x y", "d2").unwrap();
        let s3 = idx.tfidf_score("x y", "d3").unwrap();
        assert!((s1 - 0.9790694289799526).abs() < 1e-12, "{s1}");
        assert!((s2 - 0.1198832130639891).abs() < 1e-12, "{s2}");
        assert_eq!(s3, 0.0);
    }

    #[test]
    fn tfidf_zero_norm_doc_scores_zero() {
        // "x" sits in every doc, so idf = 0 and d1's vector vanishes.
        let idx = index(&[("d1", "x"), ("d2", "x")]);
        assert_eq!(idx.tfidf_score("x", "d1").unwrap(), 0.0);
    }

    #[test]
    fn ranking_breaks_ties_by_ascending_doc_id() {
        let idx = index(&[("dup_b", "a"), ("dup_a", "a"), ("other", "c")]);
        let ranked = idx
            .rank(
                LexicalMethod::Bm25,
                "a",
                &["dup_b".into(), "dup_a".into(), "other".into()],
            )
            .unwrap();
        assert_eq!(ranked[0].0, "dup_a");
        assert_eq!(ranked[1].0, "dup_b");
        assert_eq!(ranked[0].1, ranked[1].1);
    }

    #[test]
    fn rank_all_excludes_the_query_case() {
        let idx = index(&[("d1", "a"), ("d2", "a b"), ("q1", "a")]);
        let ranked = idx.rank_all(LexicalMethod::Bm25, "a", Some("q1")).unwrap();
        assert_eq!(ranked.len(), 2);
        assert!(ranked.iter().all(|(id, _)| id != "q1"));
    }

    #[test]
    fn unknown_doc_is_an_error() {
        let idx = index(&[("d1", "a")]);
        assert!(matches!(
            idx.bm25_score("a", "nope", BM25_K1, BM25_B),
            Err(BaselineError::UnknownDoc { .. })
        ));
        assert!(matches!(
            idx.tfidf_score("a", "nope"),
            Err(BaselineError::UnknownDoc { .. })
        ));
    }

    #[test]
    fn empty_and_duplicate_builds_are_rejected() {
        assert!(matches!(
            LexicalIndex::build_from_docs(std::iter::empty()),
            Err(BaselineError::EmptyIndex)
        ));
        assert!(matches!(
            LexicalIndex::build_from_docs([("d1", "a"), ("d1", "b")]),
            Err(BaselineError::DuplicateDoc { .. })
        ));
    }

    #[test]
    fn index_round_trips_and_pins_its_version() {
        let idx = index(&[("d1", "a a b"), ("d2", "c")]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        idx.save(&path).unwrap();
        let loaded = LexicalIndex::load(&path).unwrap();
        assert_eq!(loaded, idx);

        let mut tampered: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        tampered["format_version"] = serde_json::json!(999);
        std::fs::write(&path, tampered.to_string()).unwrap();
        assert!(matches!(
            LexicalIndex::load(&path),
            Err(BaselineError::FormatVersion { found: 999, .. })
        ));
    }

    fn tiny_docs() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 1..6)
                .prop_map(|words| words.join(" ")),
            1..5,
        )
    }

    proptest! {
        #[test]
        fn bm25_is_nonnegative_and_tfidf_is_a_cosine(
            docs in tiny_docs(),
            query in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "e"]), 1..4),
        ) {
            let named: Vec<(String, String)> = docs
                .iter()
                .enumerate()
                .map(|(i, text)| (format!("d{i}"), text.clone()))
                .collect();
            let idx = LexicalIndex::build_from_docs(
                named.iter().map(|(id, text)| (id.as_str(), text.as_str())),
            )
            .unwrap();
            let query = query.join(" ");
            for (id, _) in &named {
                let bm25 = idx.bm25_score(&query, id, BM25_K1, BM25_B).unwrap();
                prop_assert!(bm25 >= 0.0);
                prop_assert_eq!(bm25, idx.bm25_score(&query, id, BM25_K1, BM25_B).unwrap());
                let cos = idx.tfidf_score(&query, id).unwrap();
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&cos));
            }
        }
    }
}
