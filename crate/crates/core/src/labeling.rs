//! Sub-fact pair labeling: turns case-level relevance, crime names, and
//! (when no crime is shared) similarity scores into a Positive / Negative /
//! Discard grid for every (query sub-fact, doc sub-fact) cell.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::SimilarityMatrix;

#[derive(Debug, Error)]
pub enum LabelingError {
    #[error("crime list is empty")]
    EmptyCrimes,
    #[error("{crimes} crime names for {expected} sub-facts")]
    CrimeCountMismatch { crimes: usize, expected: usize },
    #[error("{flags} row flags for {rows} query rows")]
    FlagLengthMismatch { flags: usize, rows: usize },
    #[error(
        "query {query_id:?} sub-fact {row}: {count} positive cells across the batch, expected at most 1"
    )]
    MultiplePositives {
        query_id: String,
        row: usize,
        count: usize,
    },
}

/// Label of one (query sub-fact, doc sub-fact) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Positive,
    Negative,
    Discard,
}

/// Case-level relevance of the document that produced a label grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseLabel {
    PositiveDoc,
    NegativeDoc,
}

/// The labeled m x n grid for one (query, document) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    pub query_id: String,
    pub doc_id: String,
    pub case_label: CaseLabel,
    m: usize,
    n: usize,
    labels: Vec<PairLabel>,
}

impl LabelMatrix {
    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> PairLabel {
        debug_assert!(i < self.m && j < self.n);
        self.labels[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[PairLabel] {
        &self.labels[i * self.n..(i + 1) * self.n]
    }

    pub fn row_has_positive(&self, i: usize) -> bool {
        self.row(i).contains(&PairLabel::Positive)
    }

    /// One string per row, using P / N / - per cell.
    pub fn grid_strings(&self) -> Vec<String> {
        (0..self.m)
            .map(|i| {
                self.row(i)
                    .iter()
                    .map(|l| match l {
                        PairLabel::Positive => 'P',
                        PairLabel::Negative => 'N',
                        PairLabel::Discard => '-',
                    })
                    .collect()
            })
            .collect()
    }

    /// Debug dump of the grid in text form.
    pub fn debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "query_id": self.query_id,
            "doc_id": self.doc_id,
            "case_label": self.case_label,
            "grid": self.grid_strings(),
        })
    }
}

/// Canonical crime-name form for comparison: trimmed and case-folded.
pub fn normalize_crime(name: &str) -> String {
    name.trim().to_lowercase()
}

fn validated_crimes(crimes: &[String], expected: usize) -> Result<Vec<String>, LabelingError> {
    if crimes.is_empty() {
        return Err(LabelingError::EmptyCrimes);
    }
    if crimes.len() != expected {
        return Err(LabelingError::CrimeCountMismatch {
            crimes: crimes.len(),
            expected,
        });
    }
    Ok(crimes.iter().map(|c| normalize_crime(c)).collect())
}

/// Label a case-level positive document.
///
/// When the crime lists intersect, every query row whose crime appears in
/// the document gets Positive on the same-crime columns and Negative
/// elsewhere; rows whose crime is absent are discarded whole. When no
/// crime is shared, only the highest-similarity cell is Positive, the rest
/// of its row is Negative, and everything else is discarded (ties go to
/// the lexicographically lowest cell).
pub fn label_positive_doc(
    query_id: &str,
    doc_id: &str,
    q_crimes: &[String],
    d_crimes: &[String],
    matrix: &SimilarityMatrix,
) -> Result<LabelMatrix, LabelingError> {
    let q = validated_crimes(q_crimes, matrix.rows())?;
    let d = validated_crimes(d_crimes, matrix.cols())?;
    let (m, n) = (matrix.rows(), matrix.cols());

    let mut labels = vec![PairLabel::Discard; m * n];
    let any_shared = q.iter().any(|qc| d.contains(qc));
    if any_shared {
        for (i, qc) in q.iter().enumerate() {
            if !d.contains(qc) {
                continue; // row discarded whole
            }
            for (j, dc) in d.iter().enumerate() {
                labels[i * n + j] = if dc == qc {
                    PairLabel::Positive
                } else {
                    PairLabel::Negative
                };
            }
        }
    } else {
        let (bi, bj) = matrix.global_argmax();
        for j in 0..n {
            labels[bi * n + j] = if j == bj {
                PairLabel::Positive
            } else {
                PairLabel::Negative
            };
        }
    }
    Ok(LabelMatrix {
        query_id: query_id.to_string(),
        doc_id: doc_id.to_string(),
        case_label: CaseLabel::PositiveDoc,
        m,
        n,
        labels,
    })
}

/// Label a case-level negative document.
///
/// Rows that found no positive anywhere in the batch are discarded whole
/// (no anchor to contrast against). Rows with a positive elsewhere turn
/// fully Negative, except that any column sharing the row's crime is
/// discarded rather than kept as a false negative.
pub fn label_negative_doc(
    query_id: &str,
    doc_id: &str,
    q_crimes: &[String],
    d_crimes: &[String],
    row_has_positive: &[bool],
) -> Result<LabelMatrix, LabelingError> {
    if q_crimes.is_empty() || d_crimes.is_empty() {
        return Err(LabelingError::EmptyCrimes);
    }
    if row_has_positive.len() != q_crimes.len() {
        return Err(LabelingError::FlagLengthMismatch {
            flags: row_has_positive.len(),
            rows: q_crimes.len(),
        });
    }
    let q: Vec<String> = q_crimes.iter().map(|c| normalize_crime(c)).collect();
    let d: Vec<String> = d_crimes.iter().map(|c| normalize_crime(c)).collect();
    let (m, n) = (q.len(), d.len());

    let mut labels = vec![PairLabel::Discard; m * n];
    for (i, qc) in q.iter().enumerate() {
        if !row_has_positive[i] {
            continue;
        }
        for (j, dc) in d.iter().enumerate() {
            labels[i * n + j] = if dc == qc {
                PairLabel::Discard
            } else {
                PairLabel::Negative
            };
        }
    }
    Ok(LabelMatrix {
        query_id: query_id.to_string(),
        doc_id: doc_id.to_string(),
        case_label: CaseLabel::NegativeDoc,
        m,
        n,
        labels,
    })
}

/// Crime names of one document in a batch group.
#[derive(Debug, Clone)]
pub struct DocCrimes {
    pub doc_id: String,
    pub crimes: Vec<String>,
}

/// One query with its positive document (and that pair's similarity
/// matrix, consulted only when no crime is shared) plus the in-batch
/// negative documents.
#[derive(Debug, Clone)]
pub struct QueryGroup {
    pub query_id: String,
    pub q_crimes: Vec<String>,
    pub positive: DocCrimes,
    pub positive_matrix: SimilarityMatrix,
    pub negatives: Vec<DocCrimes>,
}

/// Label a whole batch: the positive document first (fixing which rows own
/// an anchor), then each negative. Verifies that no query row ends up with
/// more than one Positive across the batch.
pub fn build_batch_labels(groups: &[QueryGroup]) -> Result<Vec<LabelMatrix>, LabelingError> {
    let mut out = Vec::new();
    for group in groups {
        let positive = label_positive_doc(
            &group.query_id,
            &group.positive.doc_id,
            &group.q_crimes,
            &group.positive.crimes,
            &group.positive_matrix,
        )?;
        let row_flags: Vec<bool> = (0..positive.rows())
            .map(|i| positive.row_has_positive(i))
            .collect();
        out.push(positive);
        for neg in &group.negatives {
            out.push(label_negative_doc(
                &group.query_id,
                &neg.doc_id,
                &group.q_crimes,
                &neg.crimes,
                &row_flags,
            )?);
        }
    }

    // No query row may anchor on two cells: that would mean duplicate crime
    // columns in a positive document or a query repeated in the batch.
    let mut counts: std::collections::BTreeMap<(String, usize), usize> =
        std::collections::BTreeMap::new();
    for matrix in &out {
        for i in 0..matrix.rows() {
            let positives = matrix
                .row(i)
                .iter()
                .filter(|&&l| l == PairLabel::Positive)
                .count();
            if positives > 0 {
                *counts.entry((matrix.query_id.clone(), i)).or_insert(0) += positives;
            }
        }
    }
    if let Some(((query_id, row), count)) = counts.into_iter().find(|&(_, c)| c > 1) {
        return Err(LabelingError::MultiplePositives {
            query_id,
            row: row + 1,
            count,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn crimes(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn mat(m: usize, n: usize, entries: &[f64]) -> SimilarityMatrix {
        SimilarityMatrix::from_entries(m, n, entries.to_vec()).unwrap()
    }

    fn grid(matrix: &LabelMatrix) -> Vec<String> {
        matrix.grid_strings()
    }

    #[test]
    fn positive_doc_with_shared_crime() {
        let m = mat(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let lm = label_positive_doc("q", "d", &crimes(&["A", "B"]), &crimes(&["A", "C"]), &m)
            .unwrap();
        assert_eq!(grid(&lm), vec!["PN", "--"]);
        assert_eq!(lm.case_label, CaseLabel::PositiveDoc);
    }

    #[test]
    fn positive_doc_without_shared_crime_uses_argmax() {
        let m = mat(1, 2, &[0.2, 0.7]);
        let lm =
            label_positive_doc("q", "d", &crimes(&["A"]), &crimes(&["B", "C"]), &m).unwrap();
        assert_eq!(grid(&lm), vec!["NP"]);
    }

    #[test]
    fn positive_doc_single_shared_crime() {
        let m = mat(1, 1, &[0.5]);
        let lm = label_positive_doc("q", "d", &crimes(&["A"]), &crimes(&["A"]), &m).unwrap();
        assert_eq!(grid(&lm), vec!["P"]);
    }

    #[test]
    fn crime_comparison_is_normalized() {
        let m = mat(1, 1, &[0.5]);
        let lm =
            label_positive_doc("q", "d", &crimes(&[" Arson "]), &crimes(&["arson"]), &m).unwrap();
        assert_eq!(grid(&lm), vec!["P"]);
    }

    #[test]
    fn argmax_ties_break_to_the_lowest_cell() {
        let m = mat(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let lm = label_positive_doc("q", "d", &crimes(&["A", "B"]), &crimes(&["C", "D"]), &m)
            .unwrap();
        assert_eq!(grid(&lm), vec!["PN", "--"]);
    }

    #[test]
    fn duplicate_crime_columns_are_all_positive() {
        let m = mat(1, 2, &[0.1, 0.2]);
        let lm =
            label_positive_doc("q", "d", &crimes(&["A"]), &crimes(&["A", "A"]), &m).unwrap();
        assert_eq!(grid(&lm), vec!["PP"]);
    }

    #[test]
    fn positive_doc_rejects_bad_inputs() {
        let m = mat(1, 1, &[0.5]);
        assert!(matches!(
            label_positive_doc("q", "d", &[], &crimes(&["A"]), &m),
            Err(LabelingError::EmptyCrimes)
        ));
        assert!(matches!(
            label_positive_doc("q", "d", &crimes(&["A", "B"]), &crimes(&["A"]), &m),
            Err(LabelingError::CrimeCountMismatch { .. })
        ));
    }

    #[test]
    fn negative_doc_guards_shared_crimes() {
        let lm = label_negative_doc("q", "d", &crimes(&["A"]), &crimes(&["A", "B"]), &[true])
            .unwrap();
        assert_eq!(grid(&lm), vec!["-N"]);
    }

    #[test]
    fn negative_doc_without_shared_crime_is_all_negative() {
        let lm = label_negative_doc("q", "d", &crimes(&["A"]), &crimes(&["B", "C"]), &[true])
            .unwrap();
        assert_eq!(grid(&lm), vec!["NN"]);
    }

    #[test]
    fn negative_doc_discards_anchorless_rows() {
        let lm = label_negative_doc("q", "d", &crimes(&["A"]), &crimes(&["B", "C"]), &[false])
            .unwrap();
        assert_eq!(grid(&lm), vec!["--"]);
    }

    #[test]
    fn negative_doc_discards_every_shared_column() {
        let lm = label_negative_doc(
            "q",
            "d",
            &crimes(&["A"]),
            &crimes(&["A", "A", "B"]),
            &[true],
        )
        .unwrap();
        assert_eq!(grid(&lm), vec!["--N"]);
    }

    #[test]
    fn negative_doc_checks_flag_length() {
        assert!(matches!(
            label_negative_doc("q", "d", &crimes(&["A", "B"]), &crimes(&["C"]), &[true]),
            Err(LabelingError::FlagLengthMismatch { flags: 1, rows: 2 })
        ));
    }

    fn group(
        query_id: &str,
        q_crimes: &[&str],
        pos_id: &str,
        pos_crimes: &[&str],
        matrix: SimilarityMatrix,
        negatives: Vec<DocCrimes>,
    ) -> QueryGroup {
        QueryGroup {
            query_id: query_id.into(),
            q_crimes: crimes(q_crimes),
            positive: DocCrimes {
                doc_id: pos_id.into(),
                crimes: crimes(pos_crimes),
            },
            positive_matrix: matrix,
            negatives,
        }
    }

    #[test]
    fn batch_with_shared_crimes_matches_the_expected_layout() {
        let groups = vec![
            group(
                "q1",
                &["A", "B"],
                "p1",
                &["A", "C"],
                mat(2, 2, &[0.0; 4]),
                vec![DocCrimes {
                    doc_id: "p2".into(),
                    crimes: crimes(&["D"]),
                }],
            ),
            group(
                "q2",
                &["D"],
                "p2",
                &["D"],
                mat(1, 1, &[0.0]),
                vec![DocCrimes {
                    doc_id: "p1".into(),
                    crimes: crimes(&["A", "C"]),
                }],
            ),
        ];
        let matrices = build_batch_labels(&groups).unwrap();
        assert_eq!(matrices.len(), 4);
        assert_eq!(grid(&matrices[0]), vec!["PN", "--"]); // q1 x its positive
        assert_eq!(grid(&matrices[1]), vec!["N", "-"]); // q1 x q2's positive
        assert_eq!(grid(&matrices[2]), vec!["P"]); // q2 x its positive
        assert_eq!(grid(&matrices[3]), vec!["NN"]); // q2 x q1's positive
    }

    #[test]
    fn batch_without_shared_crime_has_exactly_one_positive() {
        let groups = vec![group(
            "q1",
            &["A", "B"],
            "p1",
            &["C", "D"],
            mat(2, 2, &[0.1, 0.9, 0.3, 0.2]),
            vec![],
        )];
        let matrices = build_batch_labels(&groups).unwrap();
        assert_eq!(grid(&matrices[0]), vec!["NP", "--"]);
        let positives: usize = matrices[0]
            .grid_strings()
            .iter()
            .map(|r| r.matches('P').count())
            .sum();
        assert_eq!(positives, 1);
    }

    #[test]
    fn batch_of_one_query_without_negatives() {
        let groups = vec![group("q1", &["A"], "p1", &["A"], mat(1, 1, &[0.0]), vec![])];
        let matrices = build_batch_labels(&groups).unwrap();
        assert_eq!(matrices.len(), 1);
    }

    #[test]
    fn batch_rejects_a_doubly_anchored_row() {
        let g = group("q1", &["A"], "p1", &["A", "A"], mat(1, 2, &[0.0, 0.0]), vec![]);
        assert!(matches!(
            build_batch_labels(&[g]),
            Err(LabelingError::MultiplePositives { count: 2, .. })
        ));
    }

    #[test]
    fn debug_json_mirrors_the_grid() {
        let m = mat(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let lm = label_positive_doc("q", "d", &crimes(&["A", "B"]), &crimes(&["A", "C"]), &m)
            .unwrap();
        let json = lm.debug_json();
        assert_eq!(json["case_label"], "positive_doc");
        assert_eq!(json["grid"][0], "PN");
        assert_eq!(json["grid"][1], "--");
    }

    /// Literal, cell-by-cell transcription of the labeling rules, written
    /// independently of the implementation above.
    fn oracle_positive(q: &[String], d: &[String], m: &SimilarityMatrix) -> Vec<Vec<char>> {
        let qn: Vec<String> = q.iter().map(|c| normalize_crime(c)).collect();
        let dn: Vec<String> = d.iter().map(|c| normalize_crime(c)).collect();
        let shared = qn.iter().any(|c| dn.contains(c));
        let mut out = vec![vec!['-'; dn.len()]; qn.len()];
        if shared {
            for i in 0..qn.len() {
                if dn.contains(&qn[i]) {
                    for j in 0..dn.len() {
                        out[i][j] = if dn[j] == qn[i] { 'P' } else { 'N' };
                    }
                }
            }
        } else {
            let mut best = (0, 0);
            let mut best_val = f64::NEG_INFINITY;
            for i in 0..qn.len() {
                for j in 0..dn.len() {
                    if m.get(i, j) > best_val {
                        best_val = m.get(i, j);
                        best = (i, j);
                    }
                }
            }
            for (j, cell) in out[best.0].iter_mut().enumerate() {
                *cell = if j == best.1 { 'P' } else { 'N' };
            }
        }
        out
    }

    fn oracle_negative(q: &[String], d: &[String], flags: &[bool]) -> Vec<Vec<char>> {
        let qn: Vec<String> = q.iter().map(|c| normalize_crime(c)).collect();
        let dn: Vec<String> = d.iter().map(|c| normalize_crime(c)).collect();
        let mut out = vec![vec!['-'; dn.len()]; qn.len()];
        for i in 0..qn.len() {
            if !flags[i] {
                continue;
            }
            for j in 0..dn.len() {
                out[i][j] = if dn[j] == qn[i] { '-' } else { 'N' };
            }
        }
        out
    }

    fn crime_names(max: usize) -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["A", "B", "C", "D", "E", "F", "G"]), 1..=max)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn positive_labels_match_the_oracle(
            q in crime_names(4),
            d in crime_names(4),
            entries in prop::collection::vec(-1.0f64..=1.0, 16),
        ) {
            let m = mat(q.len(), d.len(), &entries[..q.len() * d.len()]);
            let lm = label_positive_doc("q", "d", &q, &d, &m).unwrap();
            let expect: Vec<String> = oracle_positive(&q, &d, &m)
                .into_iter()
                .map(|row| row.into_iter().collect())
                .collect();
            prop_assert_eq!(lm.grid_strings(), expect);
        }

        #[test]
        fn negative_labels_match_the_oracle(
            q in crime_names(4),
            d in crime_names(4),
            flags in prop::collection::vec(any::<bool>(), 4),
        ) {
            let flags = &flags[..q.len()];
            let lm = label_negative_doc("q", "d", &q, &d, flags).unwrap();
            let expect: Vec<String> = oracle_negative(&q, &d, flags)
                .into_iter()
                .map(|row| row.into_iter().collect())
                .collect();
            prop_assert_eq!(lm.grid_strings(), expect);
        }

        #[test]
        fn rows_without_a_positive_carry_no_negatives(
            q in crime_names(4),
            d in crime_names(4),
            entries in prop::collection::vec(-1.0f64..=1.0, 16),
        ) {
            let m = mat(q.len(), d.len(), &entries[..q.len() * d.len()]);
            let positive = label_positive_doc("q", "d", &q, &d, &m).unwrap();
            let flags: Vec<bool> = (0..positive.rows()).map(|i| positive.row_has_positive(i)).collect();
            let negative = label_negative_doc("q", "d2", &q, &d, &flags).unwrap();
            for (i, &flag) in flags.iter().enumerate() {
                if !flag {
                    prop_assert!(positive.row(i).iter().all(|&l| l == PairLabel::Discard));
                    prop_assert!(negative.row(i).iter().all(|&l| l == PairLabel::Discard));
                }
            }
        }
    }
}
