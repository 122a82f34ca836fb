//! Embedding providers: a trainable hashed bag-of-tokens encoder plus a
//! precomputed-embedding file loader, both yielding one unit vector per
//! sub-fact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reformulate::{ReformulatedCase, SubFact};
use crate::text::{fnv1a64, tokenize};

/// Feature-hashing bucket count (default V).
pub const DEFAULT_VOCAB_DIM: usize = 4096;
/// Embedding dimension (default D).
pub const DEFAULT_EMBED_DIM: usize = 64;
/// Norms below this cannot be normalized meaningfully.
pub const MIN_NORM: f64 = 1e-12;
/// Slack allowed when validating externally produced unit vectors; covers
/// pipelines that normalized in single precision.
const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("text yields no tokens")]
    EmptyText,
    #[error("vector norm {norm:e} is below {MIN_NORM:e}; refusing to normalize")]
    DegenerateVector { norm: f64 },
    #[error("case has no sub-facts")]
    NoSubfacts,
    #[error("checkpoint: {reason}")]
    BadCheckpoint { reason: String },
    #[error("embedding file line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("case {case_id:?} sub-fact {index}: norm {norm} is not unit")]
    NotUnitNorm {
        case_id: String,
        index: usize,
        norm: f64,
    },
    #[error("case {case_id:?}: duplicate sub-fact index {index}")]
    DuplicateIndex { case_id: String, index: usize },
    #[error("case {case_id:?}: sub-fact indices are not contiguous from 0")]
    NonContiguousIndices { case_id: String },
    #[error("mixed embedding dimensions {first} and {other}")]
    MixedDimensions { first: usize, other: usize },
    #[error("no embeddings stored for case {case_id:?}")]
    UnknownCase { case_id: String },
    #[error("case {case_id:?}: {stored} stored embeddings for {expected} sub-facts")]
    CountMismatch {
        case_id: String,
        stored: usize,
        expected: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A fixed-dimension real vector; unit L2 norm once normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Sparse bucket counts, sorted by bucket id. The sort order makes every
/// downstream reduction deterministic.
pub type SparseFeatures = Vec<(u32, f64)>;

/// Hash each token of `text` into one of `vocab_dim` buckets and count.
/// Empty text yields an empty vector.
pub fn featurize(text: &str, vocab_dim: usize) -> SparseFeatures {
    assert!(vocab_dim > 0, "vocab_dim must be positive");
    assert!(vocab_dim <= u32::MAX as usize, "vocab_dim exceeds u32 range");
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for token in tokenize(text) {
        let bucket = (fnv1a64(token.as_bytes()) % vocab_dim as u64) as u32;
        *counts.entry(bucket).or_insert(0.0) += 1.0;
    }
    counts.into_iter().collect()
}

/// Scale `v` to unit L2 norm.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>, EncodeError> {
    let norm = l2_norm(v);
    if norm < MIN_NORM {
        return Err(EncodeError::DegenerateVector { norm });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Linear projection over hashed bag-of-tokens features. Stands in for a
/// pre-trained text encoder at desk scale: deterministic, trainable with
/// analytic gradients, no external weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoderModel {
    pub vocab_dim: usize,
    pub embed_dim: usize,
    pub seed: u64,
    /// Row-major `vocab_dim x embed_dim` weights.
    pub projection: Vec<f64>,
}

impl ToyEncoderModel {
    /// Gaussian init with scale 1/sqrt(V), fully determined by `seed`.
    pub fn new(vocab_dim: usize, embed_dim: usize, seed: u64) -> Self {
        assert!(vocab_dim > 0 && embed_dim > 0);
        assert!(vocab_dim <= u32::MAX as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (vocab_dim as f64).sqrt()).expect("finite stddev");
        let projection = (0..vocab_dim * embed_dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Self {
            vocab_dim,
            embed_dim,
            seed,
            projection,
        }
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(DEFAULT_VOCAB_DIM, DEFAULT_EMBED_DIM, seed)
    }

    pub fn row(&self, bucket: u32) -> &[f64] {
        let start = bucket as usize * self.embed_dim;
        &self.projection[start..start + self.embed_dim]
    }

    pub fn row_mut(&mut self, bucket: u32) -> &mut [f64] {
        let start = bucket as usize * self.embed_dim;
        &mut self.projection[start..start + self.embed_dim]
    }

    /// Unnormalized projection of sparse features: sum of count-weighted rows.
    pub fn project(&self, features: &SparseFeatures) -> Vec<f64> {
        let mut out = vec![0.0; self.embed_dim];
        for &(bucket, count) in features {
            for (o, w) in out.iter_mut().zip(self.row(bucket)) {
                *o += count * w;
            }
        }
        out
    }

    /// Featurize, project, normalize.
    pub fn encode_text(&self, text: &str) -> Result<Embedding, EncodeError> {
        let features = featurize(text, self.vocab_dim);
        if features.is_empty() {
            return Err(EncodeError::EmptyText);
        }
        let values = normalize(&self.project(&features))?;
        Ok(Embedding { values })
    }

    /// Write a JSON checkpoint; weights round-trip bit-exactly.
    pub fn save(&self, path: &Path) -> Result<(), EncodeError> {
        let json = serde_json::to_string(self).expect("model serializes");
        crate::io::write_atomic(path, json.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncodeError> {
        let content = fs::read_to_string(path)?;
        let model: Self = serde_json::from_str(&content).map_err(|e| EncodeError::BadCheckpoint {
            reason: e.to_string(),
        })?;
        if model.projection.len() != model.vocab_dim * model.embed_dim {
            return Err(EncodeError::BadCheckpoint {
                reason: format!(
                    "projection holds {} weights, expected {}x{}",
                    model.projection.len(),
                    model.vocab_dim,
                    model.embed_dim
                ),
            });
        }
        if model.projection.iter().any(|w| !w.is_finite()) {
            return Err(EncodeError::BadCheckpoint {
                reason: "non-finite weight".into(),
            });
        }
        Ok(model)
    }
}

/// Embed one sub-fact: its crime, cause, procedure, and outcome are
/// concatenated (whitespace-separated) and encoded as one bag of tokens.
pub fn encode_subfact(subfact: &SubFact, model: &ToyEncoderModel) -> Result<Embedding, EncodeError> {
    model.encode_text(&subfact.full_text())
}

/// Single-vector path: concatenate every sub-fact's text in order, then
/// encode once. Feeds the naive-concatenation scoring variant.
pub fn encode_concat(
    case: &ReformulatedCase,
    model: &ToyEncoderModel,
) -> Result<Embedding, EncodeError> {
    if case.subfacts.is_empty() {
        return Err(EncodeError::NoSubfacts);
    }
    let text: Vec<String> = case.subfacts.iter().map(|s| s.full_text()).collect();
    model.encode_text(&text.join("\n"))
}

/// Embedding provider contract: a pure function of (case, provider state)
/// returning one unit vector per sub-fact, in sub-fact order, all of a
/// fixed dimension.
pub trait SubfactEncoder {
    fn dim(&self) -> usize;
    fn encode_case(&self, case: &ReformulatedCase) -> Result<Vec<Embedding>, EncodeError>;
}

impl SubfactEncoder for ToyEncoderModel {
    fn dim(&self) -> usize {
        self.embed_dim
    }

    fn encode_case(&self, case: &ReformulatedCase) -> Result<Vec<Embedding>, EncodeError> {
        if case.subfacts.is_empty() {
            return Err(EncodeError::NoSubfacts);
        }
        case.subfacts
            .iter()
            .map(|s| encode_subfact(s, self))
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct EmbeddingRecord {
    case_id: String,
    subfact_index: usize,
    vector: Vec<f64>,
}

/// Embeddings produced by an external encoder, loaded from JSON Lines of
/// `{"case_id", "subfact_index", "vector"}` records. Vectors are checked
/// for unit norm on load and re-normalized to remove serialization
/// round-off.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    by_case: BTreeMap<String, Vec<Embedding>>,
}

impl PrecomputedEmbeddings {
    pub fn load(path: &Path) -> Result<Self, EncodeError> {
        let content = fs::read_to_string(path)?;
        let parsed: Vec<(usize, EmbeddingRecord)> = crate::io::parse_jsonl(&content)
            .map_err(|(line, source)| EncodeError::Parse { line, source })?;

        let mut dim: Option<usize> = None;
        let mut sparse: BTreeMap<String, BTreeMap<usize, Embedding>> = BTreeMap::new();
        for (_, rec) in parsed {
            match dim {
                None => dim = Some(rec.vector.len()),
                Some(d) if d != rec.vector.len() => {
                    return Err(EncodeError::MixedDimensions {
                        first: d,
                        other: rec.vector.len(),
                    })
                }
                Some(_) => {}
            }
            let norm = l2_norm(&rec.vector);
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(EncodeError::NotUnitNorm {
                    case_id: rec.case_id,
                    index: rec.subfact_index,
                    norm,
                });
            }
            let values = normalize(&rec.vector)?;
            let slot = sparse.entry(rec.case_id.clone()).or_default();
            if slot.insert(rec.subfact_index, Embedding { values }).is_some() {
                return Err(EncodeError::DuplicateIndex {
                    case_id: rec.case_id,
                    index: rec.subfact_index,
                });
            }
        }

        let mut by_case = BTreeMap::new();
        for (case_id, indexed) in sparse {
            let n = indexed.len();
            if indexed.keys().last() != Some(&(n - 1)) {
                return Err(EncodeError::NonContiguousIndices { case_id });
            }
            by_case.insert(case_id, indexed.into_values().collect());
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            by_case,
        })
    }

    pub fn case_ids(&self) -> impl Iterator<Item = &str> {
        self.by_case.keys().map(String::as_str)
    }
}

impl SubfactEncoder for PrecomputedEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_case(&self, case: &ReformulatedCase) -> Result<Vec<Embedding>, EncodeError> {
        let stored = self
            .by_case
            .get(&case.case_id)
            .ok_or_else(|| EncodeError::UnknownCase {
                case_id: case.case_id.clone(),
            })?;
        if stored.len() != case.subfacts.len() {
            return Err(EncodeError::CountMismatch {
                case_id: case.case_id.clone(),
                stored: stored.len(),
                expected: case.subfacts.len(),
            });
        }
        Ok(stored.clone())
    }
}
