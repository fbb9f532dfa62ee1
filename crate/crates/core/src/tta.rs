//! Episodic test-time adaptation in feature space.
//!
//! Each test sample arrives with a batch of augmented-view embeddings. A
//! residual on the class prototypes (`t'_k = normalize(t_k + r_k)`) is
//! fitted by minimizing the mean prediction entropy over the most confident
//! views, starting from zero for every sample.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::adapters::shifted_prototypes;
use crate::calibration::{penalty_term, sals, zs_norm_backward, zs_norm_transform, RangePair};
use crate::dataset::renormalize_rows;
use crate::error::{mismatch, Error, Result};
use crate::math::{entropy, log_sum_exp, softmax_into};
use crate::matrix::{dot, Matrix};
use crate::optim::AdamW;
use crate::zeroshot::PrototypeSet;

/// Augmented views of one test sample; row 0 is the original view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewBatch {
    views: Matrix,
}

impl ViewBatch {
    pub fn new(mut views: Matrix) -> Result<Self> {
        if views.rows() == 0 {
            return Err(Error::Validation("view batch is empty".into()));
        }
        renormalize_rows(&mut views)?;
        Ok(Self { views })
    }

    pub fn views(&self) -> &Matrix {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.views.rows() == 0
    }

    pub fn original(&self) -> &[f64] {
        self.views.row(0)
    }
}

/// Range control used during and after test-time adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TtaCalib {
    #[default]
    None,
    /// Rescale each view into its zero-shot range inside the objective, and
    /// the prediction at inference.
    ZsNorm,
    /// Add λ-weighted range penalties to the objective.
    Penalty,
    /// Plain objective, prediction rescaled into the zero-shot range.
    Sals,
}

impl TtaCalib {
    pub fn name(self) -> &'static str {
        match self {
            TtaCalib::None => "none",
            TtaCalib::ZsNorm => "zs-norm",
            TtaCalib::Penalty => "penalty",
            TtaCalib::Sals => "sals",
        }
    }
}

impl fmt::Display for TtaCalib {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TtaCalib {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TtaCalib::None),
            "zs-norm" => Ok(TtaCalib::ZsNorm),
            "penalty" => Ok(TtaCalib::Penalty),
            "sals" => Ok(TtaCalib::Sals),
            other => Err(Error::Config(format!("unknown calibration `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtaConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub select_fraction: f64,
    pub weight_decay: f64,
    pub calib: TtaCalib,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            steps: 1,
            select_fraction: 0.1,
            weight_decay: 0.0,
            calib: TtaCalib::None,
            lambda: 10.0,
            seed: 0,
        }
    }
}

impl TtaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.select_fraction > 0.0 && self.select_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "select fraction must be in (0, 1], got {}",
                self.select_fraction
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Indices of the `⌈ρ·V⌉` lowest-entropy rows (at least one), ascending.
/// Ties go to the lower index.
pub fn select_confident_views(probs: &Matrix, fraction: f64) -> Vec<usize> {
    let v = probs.rows();
    if v == 0 {
        return Vec::new();
    }
    let count = (libm::ceil(fraction * v as f64) as usize).clamp(1, v);
    let entropies: Vec<f64> = probs.row_iter().map(entropy).collect();
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| entropies[a].total_cmp(&entropies[b]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    order
}

fn logits_with_residual(
    views: &Matrix,
    protos: &PrototypeSet,
    residual: &Matrix,
) -> Result<(Matrix, Matrix, Vec<f64>)> {
    let (unit, norms) = shifted_prototypes(protos.prototypes(), residual, 1.0)?;
    let mut logits = views.matmul_transposed(&unit)?;
    logits.scale(1.0 / protos.temperature());
    Ok((logits, unit, norms))
}

fn softmax_matrix(logits: &Matrix) -> Matrix {
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), probs.row_mut(i));
    }
    probs
}

/// Unsupervised objective over the selected views and its gradient w.r.t.
/// the prototype residual.
pub fn tta_objective(
    batch: &ViewBatch,
    protos: &PrototypeSet,
    ranges: &[RangePair],
    selected: &[usize],
    residual: &Matrix,
    calib: TtaCalib,
    lambda: f64,
) -> Result<(f64, Matrix)> {
    if ranges.len() != batch.len() {
        return Err(mismatch(batch.len(), ranges.len(), "view ranges vs views"));
    }
    let views = batch.views().select_rows(selected);
    let (logits, unit, norms) = logits_with_residual(&views, protos, residual)?;
    let k = logits.cols();
    let m = selected.len() as f64;
    let mut value = 0.0;
    let mut g_logits = Matrix::zeros(logits.rows(), k);
    let mut scratch = vec![0.0; k];
    for (row_idx, &view) in selected.iter().enumerate() {
        let raw = logits.row(row_idx);
        let range = ranges[view];
        let shaped = match calib {
            TtaCalib::ZsNorm => zs_norm_transform(raw, range)?,
            _ => raw.to_vec(),
        };
        // H = −Σ p ln p,  dH/dl_j = −p_j (ln p_j + H)
        let lse = log_sum_exp(&shaped);
        softmax_into(&shaped, &mut scratch);
        let h: f64 = -scratch
            .iter()
            .zip(&shaped)
            .map(|(p, l)| p * (l - lse))
            .sum::<f64>();
        value += h / m;
        let g_shaped: Vec<f64> = scratch
            .iter()
            .zip(&shaped)
            .map(|(p, l)| -p * ((l - lse) + h) / m)
            .collect();
        let g_raw = match calib {
            TtaCalib::ZsNorm => zs_norm_backward(raw, range, &g_shaped),
            _ => g_shaped,
        };
        let dst = g_logits.row_mut(row_idx);
        dst.copy_from_slice(&g_raw);
        if calib == TtaCalib::Penalty && lambda > 0.0 {
            let (pen, sub) = penalty_term(raw, range)?;
            value += lambda * pen / m;
            dst.iter_mut()
                .zip(&sub)
                .for_each(|(g, s)| *g += lambda * s / m);
        }
    }
    let mut g_unit = g_logits.transpose_matmul(&views)?;
    g_unit.scale(1.0 / protos.temperature());
    let mut grad = Matrix::zeros(unit.rows(), unit.cols());
    for c in 0..unit.rows() {
        let t = unit.row(c);
        let gt = g_unit.row(c);
        let radial = dot(t, gt);
        for ((out, &gv), &tv) in grad.row_mut(c).iter_mut().zip(gt).zip(t) {
            *out = (gv - tv * radial) / norms[c];
        }
    }
    Ok((value, grad))
}

/// Result of adapting on one view batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TtaOutcome {
    pub residual: Matrix,
    pub selected: Vec<usize>,
    /// Objective before each step and after the last one (`steps + 1` values).
    pub objective: Vec<f64>,
}

/// Fits the prototype residual for one test sample.
///
/// `ranges[v]` is the zero-shot range of view `v` under the un-adapted
/// prototypes.
pub fn tta_adapt(
    batch: &ViewBatch,
    protos: &PrototypeSet,
    ranges: &[RangePair],
    config: &TtaConfig,
) -> Result<TtaOutcome> {
    config.validate()?;
    if batch.views().cols() != protos.dim() {
        return Err(mismatch(
            protos.dim(),
            batch.views().cols(),
            "view vs prototype dimension",
        ));
    }
    let mut residual = Matrix::zeros(protos.class_count(), protos.dim());
    let (initial, _, _) = logits_with_residual(batch.views(), protos, &residual)?;
    let selected = select_confident_views(&softmax_matrix(&initial), config.select_fraction);

    let mut opt = AdamW::new(config.weight_decay, &[residual.as_slice().len()]);
    let mut objective = Vec::with_capacity(config.steps + 1);
    for step in 0..=config.steps {
        let (value, grad) = tta_objective(
            batch,
            protos,
            ranges,
            &selected,
            &residual,
            config.calib,
            config.lambda,
        )?;
        if !value.is_finite() {
            return Err(Error::Adaptation {
                step,
                objective: value,
            });
        }
        objective.push(value);
        if step == config.steps {
            break;
        }
        opt.step(
            &mut [residual.as_mut_slice()],
            &[grad.into_vec()],
            config.learning_rate,
        );
    }
    Ok(TtaOutcome {
        residual,
        selected,
        objective,
    })
}

/// Prediction for the original view under the adapted prototypes, as
/// `(probabilities, logits fed to the softmax)`.
///
/// With [`TtaCalib::Sals`] or [`TtaCalib::ZsNorm`] the logits are rescaled
/// into `original_range` first.
pub fn tta_predict(
    batch: &ViewBatch,
    protos: &PrototypeSet,
    residual: &Matrix,
    calib: TtaCalib,
    original_range: RangePair,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let original = Matrix::new(1, batch.views().cols(), batch.original().to_vec())?;
    let (logits, _, _) = logits_with_residual(&original, protos, residual)?;
    let logits = match calib {
        TtaCalib::Sals | TtaCalib::ZsNorm => sals(logits.row(0), original_range)?,
        _ => logits.row(0).to_vec(),
    };
    let mut probs = vec![0.0; logits.len()];
    softmax_into(&logits, &mut probs);
    Ok((probs, logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_examples() {
        let mut rows = alloc::vec::Vec::new();
        for i in 0..10 {
            let p = 0.5 + 0.04 * i as f64;
            rows.push([p, 1.0 - p]);
        }
        let probs = Matrix::from_rows(&rows).unwrap();
        assert_eq!(select_confident_views(&probs, 0.1), [9]);
        assert_eq!(select_confident_views(&probs, 1.0).len(), 10);

        let same = Matrix::from_rows(&[[0.3, 0.7]; 10]).unwrap();
        assert_eq!(select_confident_views(&same, 0.1), [0]);
        // never empty
        assert_eq!(select_confident_views(&same, 1e-9), [0]);
    }

    #[test]
    fn calib_names_round_trip() {
        for c in [
            TtaCalib::None,
            TtaCalib::ZsNorm,
            TtaCalib::Penalty,
            TtaCalib::Sals,
        ] {
            assert_eq!(c.name().parse::<TtaCalib>().unwrap(), c);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TtaConfig {
            steps: 0,
            ..TtaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TtaConfig {
            select_fraction: 0.0,
            ..TtaConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
