//! Deterministic synthetic retrieval worlds for end-to-end training and
//! ranking tests. Query and document texts use disjoint per-crime token
//! dialects, so a freshly initialized encoder sees no useful surface
//! overlap and any ranking skill must come from training.

use crate::corpus::{CandidatePool, JudgmentSet, RelevanceJudgment};
use crate::reformulate::{ReformulatedCase, SubFact};
use crate::training::TrainPair;

/// A self-contained corpus: reformulated queries and documents, graded
/// judgments, per-query candidate pools, and the training pairs.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub queries: Vec<ReformulatedCase>,
    pub documents: Vec<ReformulatedCase>,
    pub judgments: JudgmentSet,
    pub pools: Vec<CandidatePool>,
    pub train_pairs: Vec<TrainPair>,
}

impl SyntheticWorld {
    pub fn document(&self, doc_id: &str) -> Option<&ReformulatedCase> {
        self.documents.iter().find(|d| d.case_id == doc_id)
    }
}

fn subfact(source: &str, crime: &str, cause: String, outcome: String) -> SubFact {
    SubFact {
        crime: crime.to_string(),
        cause,
        procedure: String::new(),
        outcome,
        source_case_id: source.to_string(),
    }
}

/// Four query-side dialect tokens for a crime.
fn query_dialect(crime: &str) -> String {
    (0..4).map(|t| format!("qt-{crime}-{t}")).collect::<Vec<_>>().join(" ")
}

/// Four document-side dialect tokens for a crime.
fn doc_dialect(crime: &str) -> String {
    (0..4).map(|t| format!("dt-{crime}-{t}")).collect::<Vec<_>>().join(" ")
}

/// One crime per case, crimes disjoint across queries. Each query's pool
/// holds its own-crime documents (all positive) plus neighbor-crime
/// documents; every pooled document shares exactly one surface token with
/// the query (a crime title), so the untrained ranking is a coin flip
/// while the crime structure is fully learnable.
///
/// Produces `n_queries` queries and `n_queries * docs_per_crime`
/// documents; every (query, own-crime doc) combination is a training
/// pair.
pub fn crime_disjoint_world(n_queries: usize, docs_per_crime: usize) -> SyntheticWorld {
    assert!(n_queries >= 3, "need at least 3 crimes for neighbor pools");
    assert!(docs_per_crime >= 1);
    let crime = |c: usize| format!("crime-{c}");

    let mut queries = Vec::new();
    let mut documents = Vec::new();
    let mut judgments = Vec::new();
    let mut pools = Vec::new();
    let mut train_pairs = Vec::new();

    for c in 0..n_queries {
        for k in 0..docs_per_crime {
            let doc_id = format!("d-{c}-{k}");
            documents.push(ReformulatedCase {
                case_id: doc_id.clone(),
                subfacts: vec![subfact(
                    &doc_id,
                    &crime(c),
                    doc_dialect(&crime(c)),
                    format!("u-{c}-{k}"),
                )],
            });
        }
    }

    for i in 0..n_queries {
        let query_id = format!("q-{i}");
        let j1 = (i + 1) % n_queries;
        let j2 = (i + 2) % n_queries;
        // Neighbor crime titles mentioned in the text balance the surface
        // overlap between positives and pooled negatives.
        let query = ReformulatedCase {
            case_id: query_id.clone(),
            subfacts: vec![subfact(
                &query_id,
                &crime(i),
                query_dialect(&crime(i)),
                format!("{} {}", crime(j1), crime(j2)),
            )],
        };

        let mut candidate_ids = Vec::new();
        for k in 0..docs_per_crime {
            let doc_id = format!("d-{i}-{k}");
            candidate_ids.push(doc_id.clone());
            judgments.push(RelevanceJudgment {
                query_id: query_id.clone(),
                doc_id: doc_id.clone(),
                grade: 3,
            });
            train_pairs.push(TrainPair {
                query: query.clone(),
                positive: documents
                    .iter()
                    .find(|d| d.case_id == doc_id)
                    .expect("doc built above")
                    .clone(),
            });
        }
        // Fill the pool with unjudged neighbor-crime docs, favoring j1.
        let half = docs_per_crime.div_ceil(2);
        for k in 0..half.min(docs_per_crime) {
            candidate_ids.push(format!("d-{j1}-{k}"));
        }
        for k in 0..(docs_per_crime - half) {
            candidate_ids.push(format!("d-{j2}-{k}"));
        }
        pools.push(CandidatePool {
            query_id: query_id.clone(),
            candidate_ids,
        });
        queries.push(query);
    }

    SyntheticWorld {
        queries,
        documents,
        judgments: JudgmentSet::from_judgments(judgments).expect("no duplicate judgments"),
        pools,
        train_pairs,
    }
}

/// Multi-crime cases where positives share only a subset of the query's
/// crimes. Per query i (crimes a, b, c — all private to the query):
///
/// - `d-{i}-pos1`: crimes {a, b, x, x2} — trained positive; two
///   distractor crimes pollute any merged single-vector representation.
/// - `d-{i}-pos2`: crimes {b, c, y} — positive held out of training.
/// - `d-{i}-conf`: crimes {x, x2, z} — negative built from pos1's
///   distractors, so a single-vector model aligned with pos1 scores it
///   above pos2 while per-sub-fact matching does not.
/// - `d-{i}-f1`, `d-{i}-f2`: single unrelated crimes, pure filler.
///
/// Training pairs are (query, pos1) only.
pub fn multi_crime_world(n_queries: usize) -> SyntheticWorld {
    assert!(n_queries >= 2);
    let mut queries = Vec::new();
    let mut documents = Vec::new();
    let mut judgments = Vec::new();
    let mut pools = Vec::new();
    let mut train_pairs = Vec::new();

    for i in 0..n_queries {
        let query_id = format!("q-{i}");
        let name = |tag: &str| format!("q{i}-{tag}");
        let doc_case = |suffix: &str, crimes: &[String]| ReformulatedCase {
            case_id: format!("d-{i}-{suffix}"),
            subfacts: crimes
                .iter()
                .map(|c| {
                    subfact(&format!("d-{i}-{suffix}"), c, doc_dialect(c), String::new())
                })
                .collect(),
        };

        let query = ReformulatedCase {
            case_id: query_id.clone(),
            subfacts: ["a", "b", "c"]
                .iter()
                .map(|tag| {
                    subfact(&query_id, &name(tag), query_dialect(&name(tag)), String::new())
                })
                .collect(),
        };

        let pos1 = doc_case("pos1", &[name("a"), name("b"), name("x"), name("x2")]);
        let pos2 = doc_case("pos2", &[name("b"), name("c"), name("y")]);
        let conf = doc_case("conf", &[name("x"), name("x2"), name("z")]);
        let f1 = doc_case("f1", &[name("p")]);
        let f2 = doc_case("f2", &[name("r")]);

        for (doc, grade) in [(&pos1, 3u8), (&pos2, 3), (&conf, 1), (&f1, 0), (&f2, 0)] {
            judgments.push(RelevanceJudgment {
                query_id: query_id.clone(),
                doc_id: doc.case_id.clone(),
                grade,
            });
        }
        pools.push(CandidatePool {
            query_id: query_id.clone(),
            candidate_ids: [&pos1, &pos2, &conf, &f1, &f2]
                .iter()
                .map(|d| d.case_id.clone())
                .collect(),
        });
        train_pairs.push(TrainPair {
            query: query.clone(),
            positive: pos1.clone(),
        });
        queries.push(query);
        documents.extend([pos1, pos2, conf, f1, f2]);
    }

    SyntheticWorld {
        queries,
        documents,
        judgments: JudgmentSet::from_judgments(judgments).expect("no duplicate judgments"),
        pools,
        train_pairs,
    }
}

pub use crate::reformulate::collapse_to_single_vector;

/// Single-vector view of a training set.
pub fn collapse_pairs(pairs: &[TrainPair]) -> Vec<TrainPair> {
    pairs
        .iter()
        .map(|p| TrainPair {
            query: collapse_to_single_vector(&p.query),
            positive: collapse_to_single_vector(&p.positive),
        })
        .collect()
}
