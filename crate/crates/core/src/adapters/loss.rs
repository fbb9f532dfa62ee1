use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::calibration::{penalty_term, zs_norm_backward, zs_norm_transform, RangePair};
use crate::error::{mismatch, Error, Result};
use crate::math::{log_sum_exp, softmax_into};
use crate::matrix::Matrix;

/// How the support-set objective treats the logit range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Cross-entropy on raw logits.
    #[default]
    Plain,
    /// Cross-entropy on logits rescaled into each sample's zero-shot range.
    ZsNorm,
    /// Cross-entropy plus λ-weighted ReLU penalties outside the zero-shot range.
    Penalty,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Plain => "none",
            LossMode::ZsNorm => "zs-norm",
            LossMode::Penalty => "penalty",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "plain" => Ok(LossMode::Plain),
            "zs-norm" => Ok(LossMode::ZsNorm),
            "penalty" => Ok(LossMode::Penalty),
            other => Err(Error::Config(format!("unknown loss mode `{other}`"))),
        }
    }
}

/// Mean softmax cross-entropy and its gradient `(σ(l_i) − y_i) / N`.
pub fn ce_loss_and_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(mismatch(
            logits.rows(),
            labels.len(),
            "logit rows vs labels",
        ));
    }
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(Error::Validation(format!(
                "label {y} out of range at row {i}"
            )));
        }
        let row = logits.row(i);
        loss += log_sum_exp(row) - row[y];
        let g = grad.row_mut(i);
        softmax_into(row, g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / n, grad))
}

/// Support-set objective under `mode` and its gradient w.r.t. the raw logits.
///
/// The penalty is averaged over samples like the cross-entropy, so `lambda`
/// weighs the two on the same per-sample scale.
pub fn loss_and_grad(
    logits: &Matrix,
    labels: &[usize],
    ranges: &[RangePair],
    mode: LossMode,
    lambda: f64,
) -> Result<(f64, Matrix)> {
    match mode {
        LossMode::Plain => ce_loss_and_grad(logits, labels),
        LossMode::ZsNorm => {
            check_ranges(logits, ranges)?;
            let rows: Vec<Vec<f64>> = logits
                .row_iter()
                .zip(ranges)
                .map(|(row, &r)| zs_norm_transform(row, r))
                .collect::<Result<_>>()?;
            let normalized = Matrix::from_rows(&rows)?;
            let (loss, g_norm) = ce_loss_and_grad(&normalized, labels)?;
            let mut grad = Matrix::zeros(logits.rows(), logits.cols());
            for (i, &r) in ranges.iter().enumerate() {
                let g = zs_norm_backward(logits.row(i), r, g_norm.row(i));
                grad.row_mut(i).copy_from_slice(&g);
            }
            Ok((loss, grad))
        }
        LossMode::Penalty => {
            check_ranges(logits, ranges)?;
            let (ce, mut grad) = ce_loss_and_grad(logits, labels)?;
            if lambda == 0.0 {
                return Ok((ce, grad));
            }
            let n = labels.len() as f64;
            let weight = lambda / n;
            let mut penalty = 0.0;
            for (i, &r) in ranges.iter().enumerate() {
                let (v, sub) = penalty_term(logits.row(i), r)?;
                penalty += v;
                grad.row_mut(i)
                    .iter_mut()
                    .zip(&sub)
                    .for_each(|(g, s)| *g += weight * s);
            }
            Ok((ce + weight * penalty, grad))
        }
    }
}

fn check_ranges(logits: &Matrix, ranges: &[RangePair]) -> Result<()> {
    if ranges.len() != logits.rows() {
        return Err(mismatch(
            logits.rows(),
            ranges.len(),
            "zero-shot ranges vs rows",
        ));
    }
    Ok(())
}
