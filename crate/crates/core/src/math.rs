//! Dense-vector primitives shared by every other module: softmax, entropy,
//! logit range and norm, argmax.
//!
//! All functions operate on plain slices. [`LogitVector`] and [`ProbVector`]
//! are checked wrappers for callers that want the invariants enforced once at
//! construction.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::l2_norm;

/// Finite logit vector with at least two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "logit vector needs at least 2 entries, got {}",
                values.len()
            )));
        }
        ensure_finite(&values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Probability vector: non-negative entries summing to one within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_probabilities(&values)?;
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) fn ensure_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "non-finite value {} at index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

pub(crate) fn check_probabilities(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empty probability vector".into()));
    }
    ensure_finite(values)?;
    if let Some(v) = values.iter().find(|v| **v < 0.0) {
        return Err(Error::InvalidInput(format!("negative probability {v}")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of empty vector".into()));
    }
    ensure_finite(logits)?;
    let mut out = alloc::vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

/// Unchecked softmax into a caller-provided buffer.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = libm::exp(l - max);
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// `ln Σ exp(l_k)`, stable.
pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&l| libm::exp(l - max)).sum();
    max + libm::log(total)
}

/// `max(l) - min(l)`.
pub fn logit_range(logits: &[f64]) -> f64 {
    let (lo, hi) = min_max(logits);
    hi - lo
}

pub fn logit_norm(logits: &[f64]) -> f64 {
    l2_norm(logits)
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest element; ties go to the lowest index.
pub fn argmin_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * libm::log(p))
        .sum::<f64>()
}

/// Executable forms of the two logit propositions: adding a constant moves
/// the norm but not the softmax, scaling moves the range and the winner's
/// confidence together.
pub mod props {
    use super::*;

    /// `max_k |σ_k(l + a·1) − σ_k(l)|`.
    pub fn shift_invariance_gap(logits: &[f64], shift: f64) -> Result<f64> {
        let base = softmax(logits)?;
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        let moved = softmax(&shifted)?;
        Ok(base
            .iter()
            .zip(&moved)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `(‖l‖, ‖l + a·1‖)`.
    pub fn shifted_norms(logits: &[f64], shift: f64) -> (f64, f64) {
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        (logit_norm(logits), logit_norm(&shifted))
    }

    /// Winner probability before and after scaling the logits by `factor`.
    pub fn winner_confidence(logits: &[f64], factor: f64) -> Result<(f64, f64)> {
        let k = argmax_index(logits);
        let scaled: Vec<f64> = logits.iter().map(|l| l * factor).collect();
        Ok((softmax(logits)?[k], softmax(&scaled)?[k]))
    }

    /// `(R(l), R(a·l))`.
    pub fn scaled_ranges(logits: &[f64], factor: f64) -> (f64, f64) {
        let scaled: Vec<f64> = logits.iter().map(|l| l * factor).collect();
        (logit_range(logits), logit_range(&scaled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), [0.5, 0.5]);
        let a = softmax(&[1.0, 2.0]).unwrap();
        let b = softmax(&[4.0, 5.0]).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| close(*x, *y, 1e-15)));
        let c = softmax(&[0.0, libm::log(3.0)]).unwrap();
        assert!(close(c[0], 0.25, 1e-12) && close(c[1], 0.75, 1e-12));
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 999.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn range_examples() {
        assert_eq!(logit_range(&[1.0, 4.0, 2.0]), 3.0);
        assert_eq!(logit_range(&[7.0, 7.0, 7.0]), 0.0);
        assert_eq!(
            logit_range(&[0.0, 2.0, 6.0]),
            2.0 * logit_range(&[0.0, 1.0, 3.0])
        );
    }

    #[test]
    fn norm_examples() {
        assert_eq!(logit_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(logit_norm(&[0.0, 0.0]), 0.0);
        assert!(close(logit_norm(&[1.0, 2.0]), libm::sqrt(5.0), 1e-15));
        assert!(logit_norm(&[1.0, 2.0]) > logit_norm(&[0.0, 1.0]));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_index(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_index(&[2.0, 2.0]), 0);
        assert_eq!(argmax_index(&[-1.0, -3.0]), 0);
    }

    #[test]
    fn entropy_examples() {
        assert!(close(entropy(&[0.5, 0.5]), libm::log(2.0), 1e-15));
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!(close(entropy(&[0.25, 0.75]), 0.5623, 1e-4));
    }

    #[test]
    fn wrappers_validate() {
        assert!(LogitVector::new(alloc::vec![1.0]).is_err());
        assert!(LogitVector::new(alloc::vec![1.0, f64::NAN]).is_err());
        assert!(ProbVector::new(alloc::vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(alloc::vec![0.25, 0.75]).is_ok());
    }

    fn logits(k: core::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-50.0f64..50.0, k)
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(l in logits(2..20)) {
            let p = softmax(&l).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(entropy(&p) <= libm::log(l.len() as f64) + 1e-12);
        }

        #[test]
        fn argmax_invariant_under_positive_affine(l in logits(2..12), b in 0.01f64..20.0, c in -30.0f64..30.0) {
            let mapped: Vec<f64> = l.iter().map(|v| b * v + c).collect();
            // rounding can merge near-ties; only check clear winners
            let k = argmax_index(&l);
            let runner_up = l.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(l[k] - runner_up > 1e-9);
            prop_assert_eq!(argmax_index(&mapped), k);
        }

        #[test]
        fn entropy_non_increasing_in_scale(l in logits(2..10)) {
            prop_assume!(logit_range(&l) > 1e-6);
            let mut prev = f64::INFINITY;
            for step in 0..20 {
                let a = 1.0 + step as f64 * 0.5;
                let scaled: Vec<f64> = l.iter().map(|v| v * a).collect();
                let h = entropy(&softmax(&scaled).unwrap());
                prop_assert!(h <= prev + 1e-12);
                prev = h;
            }
        }
    }
}
