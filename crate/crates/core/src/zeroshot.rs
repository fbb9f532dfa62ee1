//! Class prototypes and zero-shot logits.

use alloc::format;
use alloc::vec::Vec;

use crate::calibration::RangePair;
use crate::dataset::renormalize_rows;
use crate::error::{mismatch, Error, Result};
use crate::math::min_max;
use crate::matrix::{normalize_in_place, Matrix};

/// Logit scale 100, the convention of contrastively pretrained encoders.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

/// K class prototypes (one row each) with the softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    prototypes: Matrix,
    temperature: f64,
}

impl PrototypeSet {
    /// Wraps a prototype matrix, renormalizing its rows.
    pub fn new(mut prototypes: Matrix, temperature: f64) -> Result<Self> {
        renormalize_rows(&mut prototypes)?;
        Self::unnormalized(prototypes, temperature)
    }

    /// Wraps a prototype matrix as-is.
    pub fn unnormalized(prototypes: Matrix, temperature: f64) -> Result<Self> {
        if prototypes.rows() < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 prototypes, got {}",
                prototypes.rows()
            )));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        if !prototypes.is_finite() {
            return Err(Error::InvalidInput("non-finite prototype entry".into()));
        }
        Ok(Self {
            prototypes,
            temperature,
        })
    }

    pub fn prototypes(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn class_count(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }
}

/// Averages each class's prompt embeddings into a prototype.
///
/// `prompt_embeddings[k]` holds the prompt-ensemble embeddings of class `k`,
/// one per row. With `renormalize` the mean is rescaled to unit norm.
pub fn build_prototypes(
    prompt_embeddings: &[Matrix],
    temperature: f64,
    renormalize: bool,
) -> Result<PrototypeSet> {
    let dim = prompt_embeddings
        .first()
        .map(Matrix::cols)
        .ok_or_else(|| Error::Validation("no classes given".into()))?;
    let mut out = Matrix::zeros(prompt_embeddings.len(), dim);
    for (k, prompts) in prompt_embeddings.iter().enumerate() {
        if prompts.cols() != dim {
            return Err(Error::Validation(format!(
                "class {k} prompts have dimension {}, expected {dim}",
                prompts.cols()
            )));
        }
        if prompts.rows() == 0 {
            return Err(Error::Validation(format!("class {k} has no prompts")));
        }
        let mean = out.row_mut(k);
        for row in prompts.row_iter() {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        let n = prompts.rows() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let norm = crate::matrix::l2_norm(mean);
        if !(norm > 1e-12) {
            return Err(Error::Degenerate(format!(
                "class {k} prompt embeddings average to zero"
            )));
        }
        if renormalize {
            normalize_in_place(mean)?;
        }
    }
    PrototypeSet::unnormalized(out, temperature)
}

/// `l_ik = (z_i · t_k) / τ`.
pub fn zs_logits(features: &Matrix, protos: &PrototypeSet) -> Result<Matrix> {
    if features.cols() != protos.dim() {
        return Err(mismatch(
            protos.dim(),
            features.cols(),
            "feature vs prototype dimension",
        ));
    }
    let mut logits = features.matmul_transposed(&protos.prototypes)?;
    logits.scale(1.0 / protos.temperature);
    Ok(logits)
}

/// Per-row `(min, max)` of a logit matrix.
pub fn zs_range_table(logits: &Matrix) -> Vec<RangePair> {
    logits
        .row_iter()
        .map(|row| {
            let (lo, hi) = min_max(row);
            RangePair { lo, hi }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn single_prompt_prototypes_equal_prompts() {
        let classes = [
            Matrix::from_rows(&[basis(3, 0)]).unwrap(),
            Matrix::from_rows(&[basis(3, 2)]).unwrap(),
        ];
        let p = build_prototypes(&classes, 0.01, true).unwrap();
        assert_eq!(p.prototypes().row(0), basis(3, 0).as_slice());
        assert_eq!(p.prototypes().row(1), basis(3, 2).as_slice());
    }

    #[test]
    fn opposite_prompts_are_degenerate() {
        let classes = [
            Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap(),
            Matrix::from_rows(&[[0.0, 1.0]]).unwrap(),
        ];
        assert!(matches!(
            build_prototypes(&classes, 0.01, true),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn mean_of_two_basis_vectors_renormalized() {
        let classes = [
            Matrix::from_rows(&[basis(4, 0), basis(4, 1)]).unwrap(),
            Matrix::from_rows(&[basis(4, 3)]).unwrap(),
        ];
        let p = build_prototypes(&classes, 0.01, true).unwrap();
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let row = p.prototypes().row(0);
        assert!((row[0] - h).abs() < 1e-15 && (row[1] - h).abs() < 1e-15);
        let raw = build_prototypes(&classes, 0.01, false).unwrap();
        assert_eq!(raw.prototypes().row(0), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn mismatched_prompt_dimensions_rejected() {
        let classes = [
            Matrix::from_rows(&[basis(3, 0)]).unwrap(),
            Matrix::from_rows(&[basis(4, 0)]).unwrap(),
        ];
        assert!(matches!(
            build_prototypes(&classes, 0.01, true),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn logits_of_a_prototype() {
        let protos = PrototypeSet::new(
            Matrix::from_rows(&[basis(3, 0), basis(3, 1), basis(3, 2)]).unwrap(),
            DEFAULT_TEMPERATURE,
        )
        .unwrap();
        let z = Matrix::from_rows(&[basis(3, 0)]).unwrap();
        let l = zs_logits(&z, &protos).unwrap();
        assert_eq!(l.row(0), &[100.0, 0.0, 0.0]);
    }

    #[test]
    fn equidistant_feature_gives_uniform_softmax() {
        let protos = PrototypeSet::new(
            Matrix::from_rows(&[basis(3, 0), basis(3, 1), basis(3, 2)]).unwrap(),
            DEFAULT_TEMPERATURE,
        )
        .unwrap();
        let s = 1.0 / libm::sqrt(3.0);
        let z = Matrix::from_rows(&[[s, s, s]]).unwrap();
        let l = zs_logits(&z, &protos).unwrap();
        let p = crate::math::softmax(l.row(0)).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn unit_temperature_passes_similarity_through() {
        let protos =
            PrototypeSet::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), 1.0).unwrap();
        let z = Matrix::from_rows(&[[0.3, libm::sqrt(0.91)]]).unwrap();
        let l = zs_logits(&z, &protos).unwrap();
        assert!((l.get(0, 0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let protos =
            PrototypeSet::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(), 1.0).unwrap();
        let z = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert!(zs_logits(&z, &protos).is_err());
    }

    #[test]
    fn range_table_rows() {
        let l = Matrix::from_rows(&[[100.0, 0.0, 50.0], [2.0, 2.0, 2.0]]).unwrap();
        let t = zs_range_table(&l);
        assert_eq!(t[0], RangePair { lo: 0.0, hi: 100.0 });
        assert_eq!(t[1], RangePair { lo: 2.0, hi: 2.0 });
    }
}
