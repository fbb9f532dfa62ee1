//! End-to-end experiment: zero-shot ranges, adaptation, calibration and
//! evaluation on every test domain of a benchmark.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::adapters::{train_adapter, AdapterParams, History, LossMode, Method, TrainConfig};
use crate::calibration::{sals, scaled_range, RangePair};
use crate::dataset::Dataset;
use crate::error::{Error, Result, StageExt};
use crate::math::softmax_into;
use crate::matrix::Matrix;
use crate::metrics::{evaluate, EvalReport, DEFAULT_BINS};
use crate::synth::{synth_generate, synth_views, SynthConfig};
use crate::tta::{tta_adapt, tta_predict, TtaCalib, TtaConfig, ViewBatch};
use crate::zeroshot::{zs_logits, zs_range_table, PrototypeSet};

/// What produces the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpMethod {
    ZeroShot,
    Adapter(Method),
    Tta,
}

impl ExpMethod {
    pub fn name(self) -> &'static str {
        match self {
            ExpMethod::ZeroShot => "zeroshot",
            ExpMethod::Adapter(m) => m.name(),
            ExpMethod::Tta => "tta",
        }
    }
}

impl fmt::Display for ExpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeroshot" => Ok(ExpMethod::ZeroShot),
            "tta" => Ok(ExpMethod::Tta),
            other => other.parse().map(ExpMethod::Adapter),
        }
    }
}

/// Range control applied by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Calib {
    #[default]
    None,
    ZsNorm,
    Penalty,
    Sals,
}

impl Calib {
    pub fn name(self) -> &'static str {
        match self {
            Calib::None => "none",
            Calib::ZsNorm => "zs-norm",
            Calib::Penalty => "penalty",
            Calib::Sals => "sals",
        }
    }

    /// Training objective used by adapters under this calibration.
    pub fn loss_mode(self) -> LossMode {
        match self {
            Calib::ZsNorm => LossMode::ZsNorm,
            Calib::Penalty => LossMode::Penalty,
            Calib::None | Calib::Sals => LossMode::Plain,
        }
    }

    /// Whether predictions are rescaled into the zero-shot range at inference.
    /// Models trained on rescaled logits are evaluated the same way.
    pub fn rescales_at_inference(self) -> bool {
        matches!(self, Calib::Sals | Calib::ZsNorm)
    }

    fn tta(self) -> TtaCalib {
        match self {
            Calib::None => TtaCalib::None,
            Calib::ZsNorm => TtaCalib::ZsNorm,
            Calib::Penalty => TtaCalib::Penalty,
            Calib::Sals => TtaCalib::Sals,
        }
    }
}

impl fmt::Display for Calib {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Calib {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Calib::None),
            "zs-norm" => Ok(Calib::ZsNorm),
            "penalty" => Ok(Calib::Penalty),
            "sals" => Ok(Calib::Sals),
            other => Err(Error::Config(format!("unknown calibration `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentSpec {
    pub method: ExpMethod,
    pub calib: Calib,
    /// Width factor applied to the zero-shot range used by SaLS.
    pub range_factor: f64,
    pub bins: usize,
    pub train: TrainConfig,
    pub tta: TtaConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            method: ExpMethod::ZeroShot,
            calib: Calib::None,
            range_factor: 1.0,
            bins: DEFAULT_BINS,
            train: TrainConfig::default(),
            tta: TtaConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn new(method: ExpMethod, calib: Calib) -> Self {
        Self {
            method,
            calib,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.tta.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range_factor > 0.0 && self.range_factor <= 1.0) {
            return Err(Error::Config(format!(
                "range factor must be in (0, 1], got {}",
                self.range_factor
            )));
        }
        if self.range_factor != 1.0 && self.calib != Calib::Sals {
            return Err(Error::Config(
                "range factor other than 1 requires sals".into(),
            ));
        }
        if self.method == ExpMethod::ZeroShot
            && matches!(self.calib, Calib::ZsNorm | Calib::Penalty)
        {
            return Err(Error::Config(format!(
                "zeroshot has no training stage for {}",
                self.calib
            )));
        }
        if self.bins == 0 {
            return Err(Error::Config("bin count must be at least 1".into()));
        }
        self.train.validate()?;
        self.tta.validate()
    }
}

/// One evaluation domain; `views` is needed only for test-time adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub name: String,
    pub data: Dataset,
    pub views: Option<Vec<ViewBatch>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub prototypes: PrototypeSet,
    /// Labelled few-shot support set; required by adapter methods.
    pub support: Option<Dataset>,
    /// Support rows per original shot (augmented copies are consecutive).
    pub support_group: usize,
    pub domains: Vec<Domain>,
}

impl Benchmark {
    /// Synthetic benchmark with `source` and `target` domains.
    pub fn synthetic(config: &SynthConfig, with_views: bool) -> Result<Self> {
        let b = synth_generate(config).stage("generate")?;
        let views = |data: &Dataset, domain| -> Result<Option<Vec<ViewBatch>>> {
            if with_views {
                synth_views(config, data, domain)
                    .stage("generate")
                    .map(Some)
            } else {
                Ok(None)
            }
        };
        let source_views = views(&b.source, 0)?;
        let target_views = views(&b.target, 1)?;
        Ok(Self {
            prototypes: b.prototypes,
            support: Some(b.support),
            support_group: config.augmentations,
            domains: alloc::vec![
                Domain {
                    name: "source".to_string(),
                    data: b.source,
                    views: source_views,
                },
                Domain {
                    name: "target".to_string(),
                    data: b.target,
                    views: target_views,
                },
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainReport {
    pub domain: String,
    pub report: EvalReport,
}

/// Everything an experiment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub reports: Vec<DomainReport>,
    pub params: Option<AdapterParams>,
    pub history: Option<History>,
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut probs = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), probs.row_mut(i));
    }
    probs
}

/// Rescales every row of `logits` into its (possibly shrunk) zero-shot range.
pub fn apply_sals(logits: &Matrix, zs_ranges: &[RangePair], factor: f64) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = logits
        .row_iter()
        .zip(zs_ranges)
        .map(|(row, &r)| sals(row, scaled_range(r, factor)?))
        .collect::<Result<_>>()?;
    Matrix::from_rows(&rows)
}

/// Runs `spec` on `bench` and returns one report per domain, in order.
pub fn run_experiment(spec: &ExperimentSpec, bench: &Benchmark) -> Result<ExperimentOutcome> {
    spec.validate().stage("config")?;
    let protos = &bench.prototypes;
    let (params, history) = match spec.method {
        ExpMethod::Adapter(method) => {
            let support = bench
                .support
                .as_ref()
                .ok_or_else(|| Error::Config("adapter methods need a support set".into()))
                .stage("adapt")?;
            let ranges = zs_range_table(&zs_logits(support.features(), protos).stage("zeroshot")?);
            let mut train = spec.train;
            train.loss_mode = spec.calib.loss_mode();
            train.hyper.tip_cache_group = bench.support_group;
            let (p, h) = train_adapter(method, support, protos, &ranges, &train).stage("adapt")?;
            (Some(p), Some(h))
        }
        _ => (None, None),
    };

    let mut reports = Vec::with_capacity(bench.domains.len());
    for domain in &bench.domains {
        let features = domain.data.features();
        let zs = zs_logits(features, protos).stage("zeroshot")?;
        let zs_ranges = zs_range_table(&zs);
        let logits = match (&spec.method, &params) {
            (ExpMethod::ZeroShot, _) => zs,
            (ExpMethod::Adapter(_), Some(p)) => p.logits(features, protos).stage("adapt")?,
            (ExpMethod::Tta, _) => tta_logits(spec, domain, protos, &zs_ranges).stage("tta")?,
            (ExpMethod::Adapter(_), None) => unreachable!("adapter trained above"),
        };
        let logits = if spec.calib.rescales_at_inference() && spec.method != ExpMethod::Tta {
            apply_sals(&logits, &zs_ranges, spec.range_factor).stage("calibrate")?
        } else {
            logits
        };
        let probs = softmax_rows(&logits);
        let report =
            evaluate(&probs, &logits, domain.data.labels(), spec.bins).stage("evaluate")?;
        reports.push(DomainReport {
            domain: domain.name.clone(),
            report,
        });
    }
    Ok(ExperimentOutcome {
        reports,
        params,
        history,
    })
}

/// Adapted (and, under SaLS/ZS-Norm, rescaled) logits of every test sample.
fn tta_logits(
    spec: &ExperimentSpec,
    domain: &Domain,
    protos: &PrototypeSet,
    zs_ranges: &[RangePair],
) -> Result<Matrix> {
    let views = domain
        .views
        .as_ref()
        .ok_or_else(|| Error::Config(format!("domain `{}` has no view batches", domain.name)))?;
    if views.len() != domain.data.len() {
        return Err(Error::Validation(format!(
            "{} view batches for {} samples",
            views.len(),
            domain.data.len()
        )));
    }
    let config = TtaConfig {
        calib: spec.calib.tta(),
        ..spec.tta
    };
    let mut rows = Vec::with_capacity(views.len());
    for (batch, &range) in views.iter().zip(zs_ranges) {
        let view_ranges = zs_range_table(&zs_logits(batch.views(), protos)?);
        let outcome = tta_adapt(batch, protos, &view_ranges, &config)?;
        let (_, logits) = tta_predict(
            batch,
            protos,
            &outcome.residual,
            config.calib,
            scaled_range(range, spec.range_factor)?,
        )?;
        rows.push(logits);
    }
    Matrix::from_rows(&rows)
}
