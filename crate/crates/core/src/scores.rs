//! Probability score matrices, labels, dropout sample stacks and evidence vectors.
//!
//! Everything downstream consumes rows of class probabilities. Rows are
//! validated once on the way in: entries must be finite and non-negative, and
//! a row may deviate from unit mass by at most [`ROW_SUM_TOLERANCE`] before it
//! is rescaled to sum to one.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::ScoreError;

/// Largest accepted deviation of a raw row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-3;

/// N rows of K-class probability vectors, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    k_classes: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    /// Validates and renormalizes a rectangular matrix of raw scores.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ScoreError> {
        let first = rows.first().ok_or(ScoreError::Empty)?;
        let k = first.as_ref().len();
        if k < 2 {
            return Err(ScoreError::TooFewClasses(k));
        }
        let mut values = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != k {
                return Err(ScoreError::NonRectangular {
                    row: i,
                    expected: k,
                    found: row.len(),
                });
            }
            values.extend_from_slice(&normalize_row(i, row)?);
        }
        Ok(Self {
            k_classes: k,
            values,
        })
    }

    /// Validates a flat row-major buffer with `k` columns.
    pub fn from_flat(k: usize, values: Vec<f64>) -> Result<Self, ScoreError> {
        if k < 2 {
            return Err(ScoreError::TooFewClasses(k));
        }
        if values.is_empty() {
            return Err(ScoreError::Empty);
        }
        if !values.len().is_multiple_of(k) {
            return Err(ScoreError::NonRectangular {
                row: values.len() / k,
                expected: k,
                found: values.len() % k,
            });
        }
        let mut out = Vec::with_capacity(values.len());
        for (i, row) in values.chunks_exact(k).enumerate() {
            out.extend_from_slice(&normalize_row(i, row)?);
        }
        Ok(Self {
            k_classes: k,
            values: out,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.k_classes
    }

    pub fn k_classes(&self) -> usize {
        self.k_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k_classes..(i + 1) * self.k_classes]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.k_classes)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// Argmax of every row.
    pub fn predicted_labels(&self) -> Vec<usize> {
        self.rows().map(predicted_label).collect()
    }

    /// New matrix made of the selected rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.k_classes);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            k_classes: self.k_classes,
            values,
        }
    }
}

/// Convenience wrapper around [`ScoreMatrix::from_rows`].
pub fn validate_scores<R: AsRef<[f64]>>(rows: &[R]) -> Result<ScoreMatrix, ScoreError> {
    ScoreMatrix::from_rows(rows)
}

/// Checks a single row and rescales it to unit mass.
///
/// Rows whose sum is already within a few ulps of 1 are returned untouched,
/// which makes validation idempotent bit for bit.
fn normalize_row(row_idx: usize, row: &[f64]) -> Result<Vec<f64>, ScoreError> {
    for (col, &v) in row.iter().enumerate() {
        if !v.is_finite() {
            return Err(ScoreError::NonFiniteEntry { row: row_idx, col });
        }
        if v < 0.0 {
            return Err(ScoreError::NegativeEntry { row: row_idx, col });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(ScoreError::RowSumOutOfTolerance { row: row_idx, sum });
    }
    let exact_enough = 4.0 * row.len() as f64 * f64::EPSILON;
    if (sum - 1.0).abs() <= exact_enough {
        Ok(row.to_vec())
    } else {
        Ok(row.iter().map(|v| v / sum).collect())
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn predicted_label(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class indices ordered by descending probability, ties broken by lowest index.
pub fn rank_order(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| match row[b].partial_cmp(&row[a]) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(o) => o,
    });
    order
}

/// A score matrix paired with zero-based ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    scores: ScoreMatrix,
    labels: Vec<usize>,
}

impl LabeledScores {
    pub fn new(scores: ScoreMatrix, labels: Vec<usize>) -> Result<Self, ScoreError> {
        if labels.len() != scores.n_rows() {
            return Err(ScoreError::LabelCountMismatch {
                rows: scores.n_rows(),
                labels: labels.len(),
            });
        }
        let k = scores.k_classes();
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(ScoreError::LabelOutOfRange { row, label, k });
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k_classes(&self) -> usize {
        self.scores.k_classes()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            scores: self.scores.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Fraction of rows whose argmax equals the label.
    pub fn accuracy(&self) -> f64 {
        let hits = self
            .scores
            .rows()
            .zip(&self.labels)
            .filter(|(row, &y)| predicted_label(row) == y)
            .count();
        hits as f64 / self.len() as f64
    }

    pub fn into_parts(self) -> (ScoreMatrix, Vec<usize>) {
        (self.scores, self.labels)
    }
}

/// T stochastic forward passes for one input; each pass is a probability row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStack {
    passes: ScoreMatrix,
}

impl SampleStack {
    pub fn new(passes: ScoreMatrix) -> Self {
        Self { passes }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ScoreError> {
        ScoreMatrix::from_rows(rows).map(Self::new)
    }

    pub fn n_passes(&self) -> usize {
        self.passes.n_rows()
    }

    pub fn k_classes(&self) -> usize {
        self.passes.k_classes()
    }

    pub fn pass(&self, t: usize) -> &[f64] {
        self.passes.row(t)
    }

    pub fn passes(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.passes.rows()
    }
}

/// Non-negative per-class evidence for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceVector {
    evidence: Vec<f64>,
}

impl EvidenceVector {
    pub fn new(evidence: Vec<f64>) -> Result<Self, ScoreError> {
        if evidence.len() < 2 {
            return Err(ScoreError::TooFewClasses(evidence.len()));
        }
        if let Some(k) = evidence.iter().position(|e| !e.is_finite() || *e < 0.0) {
            return Err(ScoreError::NegativeEvidence {
                class: k,
                value: evidence[k],
            });
        }
        Ok(Self { evidence })
    }

    pub fn values(&self) -> &[f64] {
        &self.evidence
    }

    pub fn k_classes(&self) -> usize {
        self.evidence.len()
    }

    /// Dirichlet parameters `e_k + 1`.
    pub fn dirichlet_alpha(&self) -> Vec<f64> {
        self.evidence.iter().map(|e| e + 1.0).collect()
    }

    /// Dirichlet strength, the sum of `e_k + 1`.
    pub fn strength(&self) -> f64 {
        self.evidence.iter().map(|e| e + 1.0).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_simplex_row_is_unchanged() {
        let m = validate_scores(&[[0.5, 0.3, 0.2]]).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.3, 0.2]);
    }

    #[test]
    fn row_sum_tolerance_boundary() {
        let m = validate_scores(&[[0.5005, 0.2995, 0.2]]).unwrap();
        let s: f64 = m.row(0).iter().sum();
        assert!((s - 1.0).abs() <= 1e-6);
        let err = validate_scores(&[[0.6, 0.3, 0.2]]).unwrap_err();
        assert!(matches!(
            err,
            ScoreError::RowSumOutOfTolerance { row: 0, .. }
        ));
    }

    #[test]
    fn slightly_off_rows_are_renormalized() {
        let m = validate_scores(&[[0.5004, 0.3, 0.2]]).unwrap();
        let s: f64 = m.row(0).iter().sum();
        assert!((s - 1.0).abs() <= 1e-12);
        assert!(m.row(0)[0] < 0.5004);
    }

    #[test]
    fn rejects_negative_and_non_finite() {
        assert!(matches!(
            validate_scores(&[[-0.1, 0.6, 0.5]]).unwrap_err(),
            ScoreError::NegativeEntry { row: 0, col: 0 }
        ));
        assert!(matches!(
            validate_scores(&[[0.5, f64::NAN, 0.5]]).unwrap_err(),
            ScoreError::NonFiniteEntry { row: 0, col: 1 }
        ));
    }

    #[test]
    fn rejects_ragged_and_degenerate_shapes() {
        let rows: Vec<Vec<f64>> = vec![vec![0.5, 0.5], vec![0.2, 0.3, 0.5]];
        assert!(matches!(
            validate_scores(&rows).unwrap_err(),
            ScoreError::NonRectangular { row: 1, .. }
        ));
        assert!(matches!(
            validate_scores(&[[1.0]]).unwrap_err(),
            ScoreError::TooFewClasses(1)
        ));
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(
            validate_scores(&empty).unwrap_err(),
            ScoreError::Empty
        ));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(predicted_label(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(predicted_label(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(predicted_label(&[1.0, 0.0]), 0);
    }

    #[test]
    fn rank_order_breaks_ties_by_index() {
        assert_eq!(rank_order(&[0.25, 0.25, 0.25, 0.25]), vec![0, 1, 2, 3]);
        assert_eq!(rank_order(&[0.2, 0.4, 0.4]), vec![1, 2, 0]);
    }

    #[test]
    fn labels_are_checked() {
        let m = validate_scores(&[[0.5, 0.5], [0.1, 0.9]]).unwrap();
        assert!(LabeledScores::new(m.clone(), vec![0]).is_err());
        assert!(matches!(
            LabeledScores::new(m.clone(), vec![0, 2]).unwrap_err(),
            ScoreError::LabelOutOfRange {
                row: 1,
                label: 2,
                k: 2
            }
        ));
        let d = LabeledScores::new(m, vec![0, 1]).unwrap();
        assert_eq!(d.accuracy(), 1.0);
    }

    #[test]
    fn evidence_rejects_negative() {
        assert!(EvidenceVector::new(vec![1.0, -0.5]).is_err());
        let e = EvidenceVector::new(vec![9.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.strength(), 12.0);
        assert_eq!(e.dirichlet_alpha(), vec![10.0, 1.0, 1.0]);
    }

    fn near_simplex_row() -> impl Strategy<Value = Vec<f64>> {
        (2usize..12)
            .prop_flat_map(|k| (prop::collection::vec(0.0f64..1.0, k), -9e-4f64..9e-4))
            .prop_filter("non-zero mass", |(v, _)| v.iter().sum::<f64>() > 1e-3)
            .prop_map(|(v, drift)| {
                let s: f64 = v.iter().sum();
                v.iter().map(|x| x / s * (1.0 + drift)).collect()
            })
    }

    proptest! {
        #[test]
        fn validation_is_idempotent(row in near_simplex_row()) {
            let once = validate_scores(&[row]).unwrap();
            let twice = validate_scores(&[once.row(0).to_vec()]).unwrap();
            prop_assert_eq!(
                once.row(0).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                twice.row(0).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            let s: f64 = once.row(0).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn argmax_ignores_trailing_zero_classes(row in near_simplex_row(), extra in 1usize..5) {
            let mut padded = row.clone();
            padded.extend(std::iter::repeat_n(0.0, extra));
            prop_assert_eq!(predicted_label(&row), predicted_label(&padded));
        }
    }
}
