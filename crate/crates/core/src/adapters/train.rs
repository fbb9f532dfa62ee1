use alloc::format;
use alloc::vec::Vec;

use super::{AdapterHyper, AdapterParams, LossMode, Method};
use crate::calibration::{penalty_term, RangePair};
use crate::dataset::Dataset;
use crate::error::{mismatch, Error, Result};
use crate::math::{logit_norm, logit_range};
use crate::matrix::Matrix;
use crate::optim::{LrSchedule, SgdMomentum};
use crate::zeroshot::PrototypeSet;

/// Full-batch SGD recipe for adapters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss_mode: LossMode,
    pub lambda: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub hyper: AdapterHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.1,
            momentum: 0.9,
            loss_mode: LossMode::Plain,
            lambda: 10.0,
            seed: 0,
            schedule: LrSchedule::Cosine,
            hyper: AdapterHyper::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Per-epoch training trace, measured on the support set before each update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub loss: Vec<f64>,
    pub mean_logit_range: Vec<f64>,
    pub mean_logit_norm: Vec<f64>,
}

/// Mean over samples of `penalty_term / K`.
pub fn mean_violation(logits: &Matrix, ranges: &[RangePair]) -> Result<f64> {
    if ranges.len() != logits.rows() {
        return Err(mismatch(
            logits.rows(),
            ranges.len(),
            "zero-shot ranges vs rows",
        ));
    }
    let k = logits.cols() as f64;
    let mut total = 0.0;
    for (row, &r) in logits.row_iter().zip(ranges) {
        total += penalty_term(row, r)?.0 / k;
    }
    Ok(total / logits.rows() as f64)
}

/// Support objective under `mode` and its gradient for each trainable buffer
/// of `params` (order of [`AdapterParams::trainable_mut`]).
pub fn loss_and_param_grads(
    params: &AdapterParams,
    support: &Dataset,
    protos: &PrototypeSet,
    zs_ranges: &[RangePair],
    mode: LossMode,
    lambda: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let fwd = params.forward(support.features(), protos)?;
    let (loss, grad) =
        super::loss_and_grad(&fwd.logits, support.labels(), zs_ranges, mode, lambda)?;
    let grads = params.backward(support.features(), protos, &fwd, &grad)?;
    Ok((loss, grads))
}

/// Trains `method` on `support` and returns the final parameters and trace.
///
/// `zs_ranges[i]` is the zero-shot logit range of support row `i`.
pub fn train_adapter(
    method: Method,
    support: &Dataset,
    protos: &PrototypeSet,
    zs_ranges: &[RangePair],
    config: &TrainConfig,
) -> Result<(AdapterParams, History)> {
    config.validate()?;
    if zs_ranges.len() != support.len() {
        return Err(mismatch(
            support.len(),
            zs_ranges.len(),
            "zero-shot ranges vs support",
        ));
    }
    if config.loss_mode == LossMode::ZsNorm {
        if let Some(i) = zs_ranges.iter().position(|r| !(r.hi > r.lo)) {
            return Err(Error::Config(format!(
                "zs-norm needs a non-degenerate zero-shot range, support row {i} has width 0"
            )));
        }
    }
    let mut params = AdapterParams::init(method, support, protos, &config.hyper, config.seed)?;
    let mut opt = SgdMomentum::new(config.momentum, &params.trainable_shapes());
    let mut history = History::default();
    let features = support.features();
    let n = support.len() as f64;

    for epoch in 0..config.epochs {
        let fwd = params.forward(features, protos)?;
        let (loss, grad) = super::loss_and_grad(
            &fwd.logits,
            support.labels(),
            zs_ranges,
            config.loss_mode,
            config.lambda,
        )?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        history.loss.push(loss);
        history
            .mean_logit_range
            .push(fwd.logits.row_iter().map(logit_range).sum::<f64>() / n);
        history
            .mean_logit_norm
            .push(fwd.logits.row_iter().map(logit_norm).sum::<f64>() / n);

        let grads = params.backward(features, protos, &fwd, &grad)?;
        let lr = config
            .schedule
            .rate(config.learning_rate, epoch, config.epochs);
        opt.step(&mut params.trainable_mut(), &grads, lr);
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
    }
    Ok((params, history))
}
