//! Accuracy, expected calibration error with reliability bins, and logit
//! norm/range statistics.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{mismatch, Error, Result};
use crate::math::{argmax_index, check_probabilities, logit_norm, logit_range};
use crate::matrix::Matrix;

pub const DEFAULT_BINS: usize = 15;

/// One equal-width confidence bin `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinRecord {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_conf: f64,
    pub mean_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub ece: f64,
    pub bins: Vec<BinRecord>,
    pub mean_logit_norm: f64,
    pub mean_logit_range: f64,
    pub sample_count: usize,
}

impl EvalReport {
    /// Recomputes ECE from the bins and checks the bin counts.
    pub fn check_consistency(&self) -> Result<()> {
        let total: usize = self.bins.iter().map(|b| b.count).sum();
        if total != self.sample_count {
            return Err(Error::Validation(format!(
                "bin counts sum to {total}, expected {}",
                self.sample_count
            )));
        }
        let ece = ece_from_bins(&self.bins, self.sample_count);
        if (ece - self.ece).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "ece {} disagrees with bins ({ece})",
                self.ece
            )));
        }
        Ok(())
    }
}

fn check_labels(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(mismatch(
            probs.rows(),
            labels.len(),
            "prediction rows vs labels",
        ));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no samples to evaluate".into()));
    }
    Ok(())
}

pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let correct = probs
        .row_iter()
        .zip(labels)
        .filter(|(p, &y)| argmax_index(p) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Bin (0-based) of confidence `c` among `m` right-closed bins; `c = 0`
/// falls into the first bin.
pub fn bin_index(confidence: f64, m: usize) -> usize {
    let b = libm::ceil(confidence * m as f64) as usize;
    b.clamp(1, m) - 1
}

fn ece_from_bins(bins: &[BinRecord], n: usize) -> f64 {
    bins.iter()
        .map(|b| b.count as f64 / n as f64 * (b.mean_acc - b.mean_conf).abs())
        .sum()
}

/// Expected calibration error over `m` equal-width bins of max-softmax
/// confidence, with the per-bin records.
pub fn ece(probs: &Matrix, labels: &[usize], m: usize) -> Result<(f64, Vec<BinRecord>)> {
    check_labels(probs, labels)?;
    if m == 0 {
        return Err(Error::Config("bin count must be at least 1".into()));
    }
    let mut conf_sum = alloc::vec![0.0; m];
    let mut hits = alloc::vec![0usize; m];
    let mut counts = alloc::vec![0usize; m];
    for (i, (row, &y)) in probs.row_iter().zip(labels).enumerate() {
        check_probabilities(row)
            .map_err(|e| Error::InvalidInput(format!("probability row {i}: {e}")))?;
        let k = argmax_index(row);
        let c = row[k];
        let b = bin_index(c, m);
        conf_sum[b] += c;
        counts[b] += 1;
        if k == y {
            hits[b] += 1;
        }
    }
    let bins: Vec<BinRecord> = (0..m)
        .map(|b| {
            let n = counts[b];
            let (mean_conf, mean_acc) = if n == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[b] / n as f64, hits[b] as f64 / n as f64)
            };
            BinRecord {
                lo: b as f64 / m as f64,
                hi: (b + 1) as f64 / m as f64,
                count: n,
                mean_conf,
                mean_acc,
            }
        })
        .collect();
    Ok((ece_from_bins(&bins, labels.len()), bins))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitStats {
    pub mean_norm: f64,
    pub mean_range: f64,
    pub norms: Vec<f64>,
    pub ranges: Vec<f64>,
}

pub fn logit_stats(logits: &Matrix) -> LogitStats {
    let norms: Vec<f64> = logits.row_iter().map(logit_norm).collect();
    let ranges: Vec<f64> = logits.row_iter().map(logit_range).collect();
    let n = logits.rows().max(1) as f64;
    LogitStats {
        mean_norm: norms.iter().sum::<f64>() / n,
        mean_range: ranges.iter().sum::<f64>() / n,
        norms,
        ranges,
    }
}

/// Full report; `logits` are the values the probabilities were computed from.
pub fn evaluate(probs: &Matrix, logits: &Matrix, labels: &[usize], m: usize) -> Result<EvalReport> {
    if logits.rows() != probs.rows() {
        return Err(mismatch(
            probs.rows(),
            logits.rows(),
            "logit rows vs prediction rows",
        ));
    }
    let accuracy = accuracy(probs, labels)?;
    let (ece, bins) = ece(probs, labels, m)?;
    let stats = logit_stats(logits);
    let report = EvalReport {
        accuracy,
        ece,
        bins,
        mean_logit_norm: stats.mean_norm,
        mean_logit_range: stats.mean_range,
        sample_count: labels.len(),
    };
    report.check_consistency()?;
    Ok(report)
}
