//! Labelled embedding sets and their validation.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{l2_norm, Matrix};

/// Row-norm tolerance accepted for single-precision exports.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-3;

/// Unit-norm feature rows paired with class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

/// Rows that were renormalized although their norm was outside
/// `1 ± UNIT_NORM_TOLERANCE`, as `(row, original norm)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormReport {
    pub out_of_tolerance: Vec<(usize, f64)>,
}

impl Dataset {
    /// Validates shapes and labels and renormalizes every feature row.
    pub fn assemble(
        mut features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<(Self, NormReport)> {
        if class_count < 2 {
            return Err(Error::Validation(format!(
                "class count must be at least 2, got {class_count}"
            )));
        }
        if labels.is_empty() {
            return Err(Error::Validation("dataset has no samples".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.cols() < 2 {
            return Err(Error::Validation(format!(
                "embedding dimension must be at least 2, got {}",
                features.cols()
            )));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::Validation(format!(
                "label {l} at row {i} is outside [0, {class_count})"
            )));
        }
        let report = renormalize_rows(&mut features)?;
        Ok((
            Self {
                features,
                labels,
                class_count,
            },
            report,
        ))
    }

    /// Like [`Dataset::assemble`] but for rows already known to be unit norm.
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        Self::assemble(features, labels, class_count).map(|(d, _)| d)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Scales every row to unit norm. Zero or non-finite rows are an error.
pub fn renormalize_rows(features: &mut Matrix) -> Result<NormReport> {
    let mut report = NormReport::default();
    for i in 0..features.rows() {
        let row = features.row_mut(i);
        let norm = l2_norm(row);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Validation(format!(
                "row {i} has norm {norm} and cannot be normalized"
            )));
        }
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            report.out_of_tolerance.push((i, norm));
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit_rows(n: usize) -> Matrix {
        let rows: Vec<[f64; 2]> = (0..n).map(|_| [0.6, 0.8]).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn matching_rows_and_labels() {
        let d = Dataset::new(unit_rows(4), vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn count_mismatch_rejected() {
        assert!(matches!(
            Dataset::new(unit_rows(4), vec![0, 1, 0], 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn label_out_of_range_rejected() {
        assert!(Dataset::new(unit_rows(2), vec![0, 2], 2).is_err());
    }

    #[test]
    fn empty_labels_rejected() {
        assert!(Dataset::new(Matrix::zeros(0, 2), vec![], 2).is_err());
    }

    #[test]
    fn zero_row_rejected() {
        let m = Matrix::from_rows(&[[0.6, 0.8], [0.0, 0.0]]).unwrap();
        assert!(Dataset::new(m, vec![0, 1], 2).is_err());
    }

    #[test]
    fn rows_renormalized_and_reported() {
        let m = Matrix::from_rows(&[[0.6, 0.8005], [3.0, 4.0]]).unwrap();
        let (d, report) = Dataset::assemble(m, vec![0, 1], 2).unwrap();
        assert_eq!(report.out_of_tolerance.len(), 1);
        assert_eq!(report.out_of_tolerance[0].0, 1);
        for row in d.features().row_iter() {
            assert!((l2_norm(row) - 1.0).abs() < 1e-12);
        }
    }
}
