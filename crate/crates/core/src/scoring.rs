//! Relevance scoring between two sub-fact sets: the similarity matrix, the
//! MaxSim-and-Sum aggregation, the ablation aggregators (grand mean, kernel
//! pooling, single-vector), and per-row match attribution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{l2_norm, Embedding};
use crate::MAX_SUBFACTS;

/// Inner-sum clamp for kernel pooling, keeping the log finite.
pub const KERNEL_EPSILON: f64 = 1e-10;
/// Slack on the [-1, 1] entry bound and the unit-norm input contract.
const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("embedding list is empty")]
    EmptyEmbeddings,
    #[error("{count} sub-fact embeddings exceed the cap of {MAX_SUBFACTS}")]
    TooManySubfacts { count: usize },
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("input embedding has norm {norm}, not unit")]
    NotUnitNorm { norm: f64 },
    #[error("matrix entry {value} at ({row}, {col}) outside [-1, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("matrix needs {expected} entries for {m}x{n}, got {got}")]
    BadShape {
        m: usize,
        n: usize,
        expected: usize,
        got: usize,
    },
    #[error("kernel sigma {sigma} must be positive")]
    KernelSigma { sigma: f64 },
    #[error("{kernels} kernels but {weights} weights")]
    KernelWeightMismatch { kernels: usize, weights: usize },
    #[error("{crimes} crime names for {subfacts} sub-facts")]
    CrimeCountMismatch { crimes: usize, subfacts: usize },
}

/// Which aggregation turned a similarity matrix into a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregator {
    #[serde(rename = "maxsim_sum")]
    MaxSimSum,
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "kernel_pool")]
    KernelPool,
    #[serde(rename = "single_vector")]
    SingleVector,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Aggregator::MaxSimSum => "maxsim_sum",
            Aggregator::Mean => "mean",
            Aggregator::KernelPool => "kernel_pool",
            Aggregator::SingleVector => "single_vector",
        };
        write!(f, "{name}")
    }
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "maxsim_sum" => Ok(Aggregator::MaxSimSum),
            "mean" => Ok(Aggregator::Mean),
            "kernel_pool" => Ok(Aggregator::KernelPool),
            "single_vector" => Ok(Aggregator::SingleVector),
            other => Err(format!(
                "unknown aggregator {other:?}; expected maxsim_sum, mean, kernel_pool, or single_vector"
            )),
        }
    }
}

/// A relevance score tagged with the aggregator that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceScore {
    pub value: f64,
    pub aggregator: Aggregator,
}

/// Row-major m x n matrix of query-sub-fact x doc-sub-fact similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    m: usize,
    n: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    /// Pairwise dot products of two unit-embedding lists.
    pub fn new(q_embeds: &[Embedding], d_embeds: &[Embedding]) -> Result<Self, ScoringError> {
        check_embeddings(q_embeds)?;
        check_embeddings(d_embeds)?;
        let dim = q_embeds[0].dim();
        for e in q_embeds.iter().chain(d_embeds) {
            if e.dim() != dim {
                return Err(ScoringError::DimensionMismatch {
                    left: dim,
                    right: e.dim(),
                });
            }
        }
        let (m, n) = (q_embeds.len(), d_embeds.len());
        let mut entries = Vec::with_capacity(m * n);
        for q in q_embeds {
            for d in d_embeds {
                entries.push(q.dot(d));
            }
        }
        Ok(Self { m, n, entries })
    }

    /// Build from raw row-major entries, validating shape and bounds.
    pub fn from_entries(m: usize, n: usize, entries: Vec<f64>) -> Result<Self, ScoringError> {
        if m == 0 || n == 0 || m > MAX_SUBFACTS || n > MAX_SUBFACTS {
            return Err(ScoringError::TooManySubfacts { count: m.max(n) });
        }
        if entries.len() != m * n {
            return Err(ScoringError::BadShape {
                m,
                n,
                expected: m * n,
                got: entries.len(),
            });
        }
        for (idx, &v) in entries.iter().enumerate() {
            if !v.is_finite() || v.abs() > 1.0 + NORM_SLACK {
                return Err(ScoringError::EntryOutOfRange {
                    row: idx / n,
                    col: idx % n,
                    value: v,
                });
            }
        }
        Ok(Self { m, n, entries })
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.m && j < self.n);
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Column index of row `i`'s maximum; ties go to the lowest index.
    pub fn row_argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        best
    }

    /// Cell holding the global maximum; ties go to the lexicographically
    /// lowest (row, col).
    pub fn global_argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for i in 0..self.m {
            for j in 0..self.n {
                if self.get(i, j) > self.get(best.0, best.1) {
                    best = (i, j);
                }
            }
        }
        best
    }

    /// Rows as owned vectors, for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.m).map(|i| self.row(i).to_vec()).collect()
    }
}

fn check_embeddings(embeds: &[Embedding]) -> Result<(), ScoringError> {
    if embeds.is_empty() {
        return Err(ScoringError::EmptyEmbeddings);
    }
    if embeds.len() > MAX_SUBFACTS {
        return Err(ScoringError::TooManySubfacts {
            count: embeds.len(),
        });
    }
    for e in embeds {
        let norm = l2_norm(&e.values);
        if (norm - 1.0).abs() > NORM_SLACK {
            return Err(ScoringError::NotUnitNorm { norm });
        }
    }
    Ok(())
}

/// Sum over query rows of the row maximum: each query sub-fact claims its
/// best-matching doc sub-fact.
pub fn maxsim_sum(matrix: &SimilarityMatrix) -> RelevanceScore {
    let value = (0..matrix.rows())
        .map(|i| matrix.get(i, matrix.row_argmax(i)))
        .sum();
    RelevanceScore {
        value,
        aggregator: Aggregator::MaxSimSum,
    }
}

/// How the mean ablation averages the matrix. The ablation's wording is
/// ambiguous between the two; the grand mean is the default reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanMode {
    /// Mean over all m*n entries.
    #[default]
    Grand,
    /// Mean over the m row maxima.
    RowMax,
}

pub fn mean_aggregate(matrix: &SimilarityMatrix, mode: MeanMode) -> RelevanceScore {
    let value = match mode {
        MeanMode::Grand => {
            matrix.entries.iter().sum::<f64>() / (matrix.rows() * matrix.cols()) as f64
        }
        MeanMode::RowMax => maxsim_sum(matrix).value / matrix.rows() as f64,
    };
    RelevanceScore {
        value,
        aggregator: Aggregator::Mean,
    }
}

/// A Gaussian pooling kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub mu: f64,
    pub sigma: f64,
}

/// Standard kernel bank: one exact-match kernel plus ten soft kernels with
/// means spread over (-1, 1).
pub fn default_kernels() -> Vec<Kernel> {
    let mut kernels = vec![Kernel {
        mu: 1.0,
        sigma: 1e-3,
    }];
    for step in 0..10 {
        kernels.push(Kernel {
            mu: 0.9 - 0.2 * step as f64,
            sigma: 0.1,
        });
    }
    kernels
}

/// Uniform weights for [`default_kernels`]; the kernel ablation scores with
/// a fixed bank rather than trained combination weights.
pub fn default_kernel_weights() -> Vec<f64> {
    vec![1.0; 11]
}

/// Kernel pooling: per kernel, soft-count each row's matches, log, sum over
/// rows; the score is the weighted sum of kernel features.
pub fn kernel_pool(
    matrix: &SimilarityMatrix,
    kernels: &[Kernel],
    weights: &[f64],
) -> Result<RelevanceScore, ScoringError> {
    if kernels.len() != weights.len() {
        return Err(ScoringError::KernelWeightMismatch {
            kernels: kernels.len(),
            weights: weights.len(),
        });
    }
    if let Some(k) = kernels.iter().find(|k| k.sigma <= 0.0) {
        return Err(ScoringError::KernelSigma { sigma: k.sigma });
    }
    let mut value = 0.0;
    for (kernel, weight) in kernels.iter().zip(weights) {
        let mut feature = 0.0;
        for i in 0..matrix.rows() {
            let soft_count: f64 = matrix
                .row(i)
                .iter()
                .map(|&v| {
                    let z = v - kernel.mu;
                    (-z * z / (2.0 * kernel.sigma * kernel.sigma)).exp()
                })
                .sum();
            feature += soft_count.max(KERNEL_EPSILON).ln();
        }
        value += weight * feature;
    }
    Ok(RelevanceScore {
        value,
        aggregator: Aggregator::KernelPool,
    })
}

/// Single-vector ablation: one dot product between whole-case embeddings.
pub fn single_vector_score(
    q_vec: &Embedding,
    d_vec: &Embedding,
) -> Result<RelevanceScore, ScoringError> {
    if q_vec.dim() != d_vec.dim() {
        return Err(ScoringError::DimensionMismatch {
            left: q_vec.dim(),
            right: d_vec.dim(),
        });
    }
    Ok(RelevanceScore {
        value: q_vec.dot(d_vec),
        aggregator: Aggregator::SingleVector,
    })
}

/// One best-match entry per query sub-fact. Indices are 1-based, matching
/// how sub-facts are numbered in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchAttribution {
    pub entries: Vec<MatchEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEntry {
    pub q_index: usize,
    pub d_index: usize,
    pub score: f64,
}

/// For each query row, the argmax column and its similarity; ties go to
/// the lowest column.
pub fn attribute_matches(matrix: &SimilarityMatrix) -> MatchAttribution {
    let entries = (0..matrix.rows())
        .map(|i| {
            let j = matrix.row_argmax(i);
            MatchEntry {
                q_index: i + 1,
                d_index: j + 1,
                score: matrix.get(i, j),
            }
        })
        .collect();
    MatchAttribution { entries }
}

/// The interpretability artifact: which doc sub-fact each query sub-fact
/// matched, alongside the full matrix and the aggregate score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub query_id: String,
    pub doc_id: String,
    pub aggregator: Aggregator,
    pub matrix: Vec<Vec<f64>>,
    pub attributions: Vec<ExplanationAttribution>,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationAttribution {
    pub q_index: usize,
    pub d_index: usize,
    pub score: f64,
    pub q_crime: String,
    pub d_crime: String,
}

impl ExplanationReport {
    /// Assemble a report for one scored pair. Crime lists run parallel to
    /// the query/doc sub-facts.
    pub fn build(
        query_id: &str,
        doc_id: &str,
        matrix: &SimilarityMatrix,
        q_crimes: &[String],
        d_crimes: &[String],
        score: RelevanceScore,
    ) -> Result<Self, ScoringError> {
        if q_crimes.len() != matrix.rows() {
            return Err(ScoringError::CrimeCountMismatch {
                crimes: q_crimes.len(),
                subfacts: matrix.rows(),
            });
        }
        if d_crimes.len() != matrix.cols() {
            return Err(ScoringError::CrimeCountMismatch {
                crimes: d_crimes.len(),
                subfacts: matrix.cols(),
            });
        }
        let attributions = attribute_matches(matrix)
            .entries
            .into_iter()
            .map(|e| ExplanationAttribution {
                q_index: e.q_index,
                d_index: e.d_index,
                score: e.score,
                q_crime: q_crimes[e.q_index - 1].clone(),
                d_crime: d_crimes[e.d_index - 1].clone(),
            })
            .collect();
        Ok(Self {
            query_id: query_id.to_string(),
            doc_id: doc_id.to_string(),
            aggregator: score.aggregator,
            matrix: matrix.to_rows(),
            attributions,
            score: score.value,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(values: Vec<f64>) -> Embedding {
        Embedding { values }
    }

    fn mat(m: usize, n: usize, entries: &[f64]) -> SimilarityMatrix {
        SimilarityMatrix::from_entries(m, n, entries.to_vec()).unwrap()
    }

    #[test]
    fn identical_vectors_score_one() {
        let e = unit(vec![1.0, 0.0]);
        let m =
            SimilarityMatrix::new(std::slice::from_ref(&e), std::slice::from_ref(&e)).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn orthogonal_vectors_score_zero() {
        let q = unit(vec![1.0, 0.0]);
        let d = unit(vec![0.0, 1.0]);
        let m = SimilarityMatrix::new(&[q], &[d]).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn matrix_shape_follows_inputs() {
        let q = vec![unit(vec![1.0, 0.0]), unit(vec![0.0, 1.0])];
        let d = vec![
            unit(vec![1.0, 0.0]),
            unit(vec![0.0, 1.0]),
            unit(vec![0.0, -1.0]),
        ];
        let m = SimilarityMatrix::new(&q, &d).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m.get(1, 2), -1.0);
    }

    #[test]
    fn matrix_rejects_bad_inputs() {
        let e = unit(vec![1.0, 0.0]);
        assert!(matches!(
            SimilarityMatrix::new(&[], std::slice::from_ref(&e)),
            Err(ScoringError::EmptyEmbeddings)
        ));
        assert!(matches!(
            SimilarityMatrix::new(&vec![e.clone(); 5], std::slice::from_ref(&e)),
            Err(ScoringError::TooManySubfacts { count: 5 })
        ));
        assert!(matches!(
            SimilarityMatrix::new(std::slice::from_ref(&e), &[unit(vec![1.0, 0.0, 0.0])]),
            Err(ScoringError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            SimilarityMatrix::new(&[unit(vec![0.5, 0.5])], &[e]),
            Err(ScoringError::NotUnitNorm { .. })
        ));
    }

    #[test]
    fn from_entries_validates_range() {
        assert!(matches!(
            SimilarityMatrix::from_entries(1, 1, vec![1.5]),
            Err(ScoringError::EntryOutOfRange { .. })
        ));
        assert!(matches!(
            SimilarityMatrix::from_entries(2, 2, vec![0.0; 3]),
            Err(ScoringError::BadShape { .. })
        ));
    }

    #[test]
    fn maxsim_sum_takes_row_maxima() {
        let m = mat(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let s = maxsim_sum(&m);
        assert!((s.value - 1.7).abs() < 1e-12);
        assert_eq!(s.aggregator, Aggregator::MaxSimSum);
    }

    #[test]
    fn maxsim_sum_of_singleton_is_identity() {
        assert_eq!(maxsim_sum(&mat(1, 1, &[0.37])).value, 0.37);
    }

    #[test]
    fn maxsim_sum_ignores_column_order() {
        let m = mat(2, 3, &[0.9, 0.1, 0.3, 0.2, 0.8, 0.5]);
        let p = mat(2, 3, &[0.3, 0.9, 0.1, 0.5, 0.2, 0.8]);
        assert_eq!(maxsim_sum(&m).value, maxsim_sum(&p).value);
    }

    #[test]
    fn mean_grand_and_rowmax_modes() {
        let m = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!((mean_aggregate(&m, MeanMode::Grand).value - 0.5).abs() < 1e-12);
        assert!((mean_aggregate(&m, MeanMode::RowMax).value - 1.0).abs() < 1e-12);
        assert_eq!(mean_aggregate(&mat(1, 1, &[0.4]), MeanMode::Grand).value, 0.4);
        let c = mat(2, 2, &[0.3, 0.3, 0.3, 0.3]);
        assert!((mean_aggregate(&c, MeanMode::Grand).value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn exact_kernel_at_its_mean_contributes_zero() {
        let kernels = default_kernels();
        let mut weights = vec![0.0; kernels.len()];
        weights[0] = 1.0;
        let s = kernel_pool(&mat(1, 1, &[1.0]), &kernels, &weights).unwrap();
        assert!(s.value.abs() < 1e-12, "{}", s.value);
    }

    #[test]
    fn exact_kernel_far_from_mean_hits_the_clamp() {
        let kernels = default_kernels();
        let mut weights = vec![0.0; kernels.len()];
        weights[0] = 1.0;
        let s = kernel_pool(&mat(1, 1, &[0.0]), &kernels, &weights).unwrap();
        assert!((s.value - KERNEL_EPSILON.ln()).abs() < 1e-12);
        assert!((s.value + 23.025850929940457).abs() < 1e-9);
    }

    #[test]
    fn zero_weights_zero_score() {
        let kernels = default_kernels();
        let weights = vec![0.0; kernels.len()];
        let m = mat(2, 2, &[0.9, -0.4, 0.2, 0.8]);
        assert_eq!(kernel_pool(&m, &kernels, &weights).unwrap().value, 0.0);
    }

    #[test]
    fn kernel_pool_rejects_bad_parameters() {
        let m = mat(1, 1, &[0.0]);
        assert!(matches!(
            kernel_pool(&m, &[Kernel { mu: 0.0, sigma: 0.0 }], &[1.0]),
            Err(ScoringError::KernelSigma { .. })
        ));
        assert!(matches!(
            kernel_pool(&m, &default_kernels(), &[1.0]),
            Err(ScoringError::KernelWeightMismatch { .. })
        ));
    }

    #[test]
    fn default_kernel_bank_shape() {
        let kernels = default_kernels();
        assert_eq!(kernels.len(), 11);
        assert_eq!((kernels[0].mu, kernels[0].sigma), (1.0, 1e-3));
        assert!((kernels[1].mu - 0.9).abs() < 1e-12);
        assert!((kernels[10].mu + 0.9).abs() < 1e-12);
        assert_eq!(default_kernel_weights(), vec![1.0; 11]);
    }

    #[test]
    fn single_vector_is_a_dot_product() {
        let q = unit(vec![1.0, 0.0]);
        assert_eq!(single_vector_score(&q, &q).unwrap().value, 1.0);
        assert_eq!(
            single_vector_score(&q, &unit(vec![0.0, 1.0])).unwrap().value,
            0.0
        );
        assert_eq!(
            single_vector_score(&q, &unit(vec![-1.0, 0.0])).unwrap().value,
            -1.0
        );
        assert!(matches!(
            single_vector_score(&q, &unit(vec![1.0, 0.0, 0.0])),
            Err(ScoringError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn attribution_picks_row_argmax_with_low_tie() {
        let m = mat(1, 2, &[0.5, 0.5]);
        let a = attribute_matches(&m);
        assert_eq!(a.entries.len(), 1);
        assert_eq!(
            (a.entries[0].q_index, a.entries[0].d_index, a.entries[0].score),
            (1, 1, 0.5)
        );
    }

    #[test]
    fn attribution_of_singleton() {
        let a = attribute_matches(&mat(1, 1, &[0.9]));
        assert_eq!(a.entries[0].d_index, 1);
    }

    #[test]
    fn diagonal_dominant_two_by_two_attributes_diagonally() {
        // Shape of the worked two-crime example: each query sub-fact pairs
        // off with the doc sub-fact for the same crime.
        let m = mat(2, 2, &[0.9, 0.3, 0.2, 0.8]);
        let a = attribute_matches(&m);
        let pairs: Vec<(usize, usize)> =
            a.entries.iter().map(|e| (e.q_index, e.d_index)).collect();
        assert_eq!(pairs, vec![(1, 1), (2, 2)]);
    }

    #[test]
    fn attribution_scores_sum_to_maxsim() {
        let m = mat(3, 4, &[0.1, 0.9, -0.2, 0.3, 0.5, 0.4, 0.6, -0.9, 0.0, 0.0, 0.0, 0.0]);
        let total: f64 = attribute_matches(&m).entries.iter().map(|e| e.score).sum();
        assert_eq!(total, maxsim_sum(&m).value);
    }

    #[test]
    fn explanation_report_has_the_documented_shape() {
        let m = mat(2, 2, &[0.9, 0.3, 0.2, 0.8]);
        let report = ExplanationReport::build(
            "q1",
            "d1",
            &m,
            &["robbery".into(), "harboring".into()],
            &["robbery".into(), "harboring".into()],
            maxsim_sum(&m),
        )
        .unwrap();
        // Serialized text preserves field declaration order (to_value would
        // re-sort keys alphabetically), so check ordering on the raw string.
        let text = serde_json::to_string(&report).unwrap();
        let fields = ["query_id", "doc_id", "aggregator", "matrix", "attributions", "score"];
        let positions: Vec<usize> = fields
            .iter()
            .map(|f| text.find(&format!("\"{f}\"")).unwrap_or_else(|| panic!("missing {f}")))
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "field order: {text}");

        let attr_fields = ["q_index", "d_index", "score", "q_crime", "d_crime"];
        let attr_positions: Vec<usize> = attr_fields
            .iter()
            .map(|f| text.find(&format!("\"{f}\"")).unwrap_or_else(|| panic!("missing {f}")))
            .collect();
        assert!(attr_positions.windows(2).all(|w| w[0] < w[1]), "attribution order: {text}");

        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["aggregator"], "maxsim_sum");
        assert_eq!(json["attributions"][0]["q_crime"], "robbery");
        assert_eq!(json["attributions"][1]["d_index"], 2);
    }

    #[test]
    fn explanation_report_checks_crime_counts() {
        let m = mat(2, 2, &[0.9, 0.3, 0.2, 0.8]);
        let err = ExplanationReport::build(
            "q1",
            "d1",
            &m,
            &["robbery".into()],
            &["robbery".into(), "harboring".into()],
            maxsim_sum(&m),
        );
        assert!(matches!(err, Err(ScoringError::CrimeCountMismatch { .. })));
    }

    fn matrix_strategy() -> impl Strategy<Value = SimilarityMatrix> {
        (1usize..=4, 1usize..=4).prop_flat_map(|(m, n)| {
            prop::collection::vec(-1.0f64..=1.0, m * n)
                .prop_map(move |entries| SimilarityMatrix::from_entries(m, n, entries).unwrap())
        })
    }

    proptest! {
        #[test]
        fn maxsim_matches_brute_force(m in matrix_strategy()) {
            let mut oracle = 0.0;
            for i in 0..m.rows() {
                let mut best = f64::NEG_INFINITY;
                for j in 0..m.cols() {
                    if m.get(i, j) > best {
                        best = m.get(i, j);
                    }
                }
                oracle += best;
            }
            prop_assert_eq!(maxsim_sum(&m).value, oracle);
        }

        #[test]
        fn appending_a_column_never_lowers_maxsim(
            m in matrix_strategy(),
            extra in prop::collection::vec(-1.0f64..=1.0, 4),
        ) {
            prop_assume!(m.cols() < 4);
            let mut entries = Vec::new();
            for (i, &pad) in extra.iter().enumerate().take(m.rows()) {
                entries.extend_from_slice(m.row(i));
                entries.push(pad);
            }
            let wider = SimilarityMatrix::from_entries(m.rows(), m.cols() + 1, entries).unwrap();
            prop_assert!(maxsim_sum(&wider).value >= maxsim_sum(&m).value);
        }

        #[test]
        fn appending_a_row_adds_exactly_its_max(
            m in matrix_strategy(),
            extra in prop::collection::vec(-1.0f64..=1.0, 4),
        ) {
            prop_assume!(m.rows() < 4);
            let mut entries = m.to_rows().concat();
            let new_row = &extra[..m.cols()];
            entries.extend_from_slice(new_row);
            let taller = SimilarityMatrix::from_entries(m.rows() + 1, m.cols(), entries).unwrap();
            let row_max = new_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(maxsim_sum(&taller).value, maxsim_sum(&m).value + row_max);
        }

        #[test]
        fn aggregate_bounds_hold(m in matrix_strategy()) {
            let rows = m.rows() as f64;
            let s = maxsim_sum(&m).value;
            prop_assert!(s >= -rows - 1e-9 && s <= rows + 1e-9);
            let g = mean_aggregate(&m, MeanMode::Grand).value;
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&g));
            let r = mean_aggregate(&m, MeanMode::RowMax).value;
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&r));
        }

        #[test]
        fn attribution_totals_equal_maxsim(m in matrix_strategy()) {
            let total: f64 = attribute_matches(&m).entries.iter().map(|e| e.score).sum();
            prop_assert_eq!(total, maxsim_sum(&m).value);
        }

        #[test]
        fn kernel_pool_is_finite_on_defaults(m in matrix_strategy()) {
            let s = kernel_pool(&m, &default_kernels(), &default_kernel_weights()).unwrap();
            prop_assert!(s.value.is_finite());
        }
    }
}
