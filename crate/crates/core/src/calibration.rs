//! Logit-range controls: min-max rescaling into a sample's zero-shot range
//! (used as a training-time transform and as post-hoc SaLS), the ReLU range
//! penalty, and range shrinking.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{argmax_index, argmin_index, ensure_finite, min_max};

/// Zero-shot logit bounds of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangePair {
    pub lo: f64,
    pub hi: f64,
}

impl RangePair {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let r = Self { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.hi < self.lo {
            return Err(Error::InvalidRange {
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Affine map of `logits` whose minimum lands on `range.lo` and maximum on
/// `range.hi`. A constant input maps to the constant midpoint of `range`.
pub fn zs_norm_transform(logits: &[f64], range: RangePair) -> Result<Vec<f64>> {
    range.validate()?;
    ensure_finite(logits)?;
    let (min, max) = min_max(logits);
    if max <= min {
        return Ok(vec![range.midpoint(); logits.len()]);
    }
    let spread = max - min;
    let width = range.width();
    // ratio form keeps the map weakly monotone after rounding and sends the
    // minimum exactly to `lo`
    Ok(logits
        .iter()
        .map(|l| range.lo + width * ((l - min) / spread))
        .collect())
}

/// Vector-Jacobian product of [`zs_norm_transform`]: given `dL/dl'`, returns
/// `dL/dl`.
///
/// The input min and max are treated as functions of the logits, so gradient
/// also flows through the elements that attain them (lowest index at ties).
/// The constant-input branch has zero gradient.
pub fn zs_norm_backward(logits: &[f64], range: RangePair, grad_out: &[f64]) -> Vec<f64> {
    let (min, max) = min_max(logits);
    let mut grad = vec![0.0; logits.len()];
    if max <= min {
        return grad;
    }
    let spread = max - min;
    let slope = range.width() / spread;
    let mut via_max = 0.0;
    let mut via_min = 0.0;
    for ((g, &go), &l) in grad.iter_mut().zip(grad_out).zip(logits) {
        *g = slope * go;
        let u = (l - min) / spread;
        via_max -= go * slope * u;
        via_min += go * slope * (u - 1.0);
    }
    grad[argmax_index(logits)] += via_max;
    grad[argmin_index(logits)] += via_min;
    grad
}

/// `Σ_k relu(l_k − hi) + relu(lo − l_k)` and its subgradient (0 at kinks).
pub fn penalty_term(logits: &[f64], range: RangePair) -> Result<(f64, Vec<f64>)> {
    range.validate()?;
    let mut value = 0.0;
    let grad = logits
        .iter()
        .map(|&l| {
            if l > range.hi {
                value += l - range.hi;
                1.0
            } else if l < range.lo {
                value += range.lo - l;
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok((value, grad))
}

/// Sample-adaptive logit scaling: the zero-shot range rescaling applied at
/// inference to an adapted model's logits.
///
/// The argmax is preserved whenever the input is non-constant and
/// `range.hi > range.lo`.
pub fn sals(logits: &[f64], range: RangePair) -> Result<Vec<f64>> {
    let out = zs_norm_transform(logits, range)?;
    debug_assert!(
        range.hi <= range.lo
            || logits.iter().all(|l| *l == logits[0])
            || argmax_index(&out) == argmax_index(logits)
    );
    Ok(out)
}

/// Shrinks (or keeps) the width of `range` by `factor` around its midpoint.
pub fn scaled_range(range: RangePair, factor: f64) -> Result<RangePair> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Config(alloc::format!(
            "range factor must be positive, got {factor}"
        )));
    }
    range.validate()?;
    if factor == 1.0 {
        return Ok(range);
    }
    let mid = range.midpoint();
    let half = 0.5 * factor * range.width();
    Ok(RangePair {
        lo: mid - half,
        hi: mid + half,
    })
}
