//! Experiment spec files for `logitrange run`.
//!
//! A spec is a `key = value` file. Unknown keys are an error. Relative
//! paths are resolved against the spec file's directory.
//!
//! | key | default |
//! |-----|---------|
//! | `method` | required: `zeroshot`, `lp`, `clip-adapter`, `taskres`, `tip-f`, `tta` |
//! | `calib` | `none` (`zs-norm`, `penalty`, `sals`) |
//! | `range_factor` | `1` |
//! | `bins` | `15` |
//! | `seed` | `0`; seeds data generation, adapter init and TTA |
//! | `train.epochs`, `train.lr`, `train.momentum`, `train.lambda`, `train.schedule` | `300`, `0.1`, `0.9`, `10`, `cosine` |
//! | `adapter.clip_reduction`, `adapter.clip_blend`, `adapter.taskres_scale`, `adapter.tip_blend`, `adapter.tip_sharpness` | `4`, `0.2`, `0.5`, `1`, `5.5` |
//! | `tta.lr`, `tta.steps`, `tta.select_fraction`, `tta.weight_decay`, `tta.lambda` | `0.005`, `1`, `0.1`, `0`, `10` |
//! | `data` | `synth` or `files` |
//!
//! With `data = synth`, the generator reads `synth.classes`, `synth.dim`,
//! `synth.shots`, `synth.augmentations`, `synth.augment_noise`,
//! `synth.test_n`, `synth.sigma_src`, `synth.sigma_tgt`,
//! `synth.drift_angle`, `synth.prompt_jitter`, `synth.temperature`,
//! `synth.views` and `synth.view_noise`.
//!
//! With `data = files`: `classes`, `temperature` (default `0.01`), one of
//! `prototypes` (VLF1) or `prompts` (prompt manifest),
//! `renorm_prototypes` (default `true`), `support.features` and
//! `support.labels` (needed by adapters), `support.augmentations`
//! (consecutive support rows per shot, default `1`), `domains` (comma-separated
//! names) and, per domain, `domain.<name>.features`,
//! `domain.<name>.labels` and optionally `domain.<name>.views`.

use std::path::{Path, PathBuf};

use logitrange_core::adapters::{AdapterHyper, TrainConfig};
use logitrange_core::dataset::NormReport;
use logitrange_core::pipeline::{Benchmark, Calib, Domain, ExpMethod, ExperimentSpec};
use logitrange_core::synth::SynthConfig;
use logitrange_core::tta::TtaConfig;
use logitrange_core::zeroshot::DEFAULT_TEMPERATURE;

use crate::data::{load_dataset, load_prompt_prototypes, load_prototypes, originals, read_views};
use crate::error::{Error, Result};
use crate::kv::KeyValues;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthConfig),
    Files(FileSources),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileSources {
    pub classes: usize,
    pub temperature: f64,
    pub prototypes: PrototypeSource,
    pub renormalize_prototypes: bool,
    pub support: Option<(PathBuf, PathBuf)>,
    pub support_group: usize,
    pub domains: Vec<DomainFiles>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrototypeSource {
    Matrix(PathBuf),
    Prompts(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainFiles {
    pub name: String,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub views: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub experiment: ExperimentSpec,
    pub data: DataSource,
}

/// Rows renormalized on load although they were off by more than the
/// tolerance, per file.
pub type LoadWarnings = Vec<(PathBuf, NormReport)>;

impl RunSpec {
    /// Parses a spec file and applies `key=value` overrides in order.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let mut kv = KeyValues::read(path)?;
        for o in overrides {
            kv.apply_override(o)?;
        }
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_kv(kv, &base)
    }

    pub fn from_kv(mut kv: KeyValues, base: &Path) -> Result<Self> {
        let method: ExpMethod = kv.require("method")?;
        let calib: Calib = kv.take_or("calib", Calib::None)?;
        let seed: u64 = kv.take_or("seed", 0)?;

        let d = TrainConfig::default();
        let h = AdapterHyper::default();
        let train = TrainConfig {
            epochs: kv.take_or("train.epochs", d.epochs)?,
            learning_rate: kv.take_or("train.lr", d.learning_rate)?,
            momentum: kv.take_or("train.momentum", d.momentum)?,
            lambda: kv.take_or("train.lambda", d.lambda)?,
            schedule: kv.take_or("train.schedule", d.schedule)?,
            hyper: AdapterHyper {
                clip_reduction: kv.take_or("adapter.clip_reduction", h.clip_reduction)?,
                clip_blend: kv.take_or("adapter.clip_blend", h.clip_blend)?,
                taskres_scale: kv.take_or("adapter.taskres_scale", h.taskres_scale)?,
                tip_blend: kv.take_or("adapter.tip_blend", h.tip_blend)?,
                tip_sharpness: kv.take_or("adapter.tip_sharpness", h.tip_sharpness)?,
                ..h
            },
            seed,
            loss_mode: calib.loss_mode(),
        };
        let t = TtaConfig::default();
        let tta = TtaConfig {
            learning_rate: kv.take_or("tta.lr", t.learning_rate)?,
            steps: kv.take_or("tta.steps", t.steps)?,
            select_fraction: kv.take_or("tta.select_fraction", t.select_fraction)?,
            weight_decay: kv.take_or("tta.weight_decay", t.weight_decay)?,
            lambda: kv.take_or("tta.lambda", t.lambda)?,
            seed,
            calib: t.calib,
        };
        let experiment = ExperimentSpec {
            method,
            calib,
            range_factor: kv.take_or("range_factor", 1.0)?,
            bins: kv.take_or("bins", ExperimentSpec::default().bins)?,
            train,
            tta,
        };

        let source: String = kv.take_or("data", "synth".to_string())?;
        let data = match source.as_str() {
            "synth" => DataSource::Synth(synth_config(&mut kv, seed)?),
            "files" => DataSource::Files(file_sources(&mut kv, base)?),
            other => return Err(Error::Spec(format!("unknown data source `{other}`"))),
        };
        kv.finish()?;
        experiment.validate()?;
        Ok(Self { experiment, data })
    }

    /// Generates or loads the benchmark the spec refers to.
    pub fn benchmark(&self) -> Result<(Benchmark, LoadWarnings)> {
        let with_views = self.experiment.method == ExpMethod::Tta;
        match &self.data {
            DataSource::Synth(cfg) => Ok((Benchmark::synthetic(cfg, with_views)?, Vec::new())),
            DataSource::Files(f) => f.load(with_views),
        }
    }
}

pub(crate) fn synth_config(kv: &mut KeyValues, seed: u64) -> Result<SynthConfig> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        class_count: kv.take_or("synth.classes", d.class_count)?,
        dim: kv.take_or("synth.dim", d.dim)?,
        shots: kv.take_or("synth.shots", d.shots)?,
        augmentations: kv.take_or("synth.augmentations", d.augmentations)?,
        augment_noise: kv.take_or("synth.augment_noise", d.augment_noise)?,
        test_n: kv.take_or("synth.test_n", d.test_n)?,
        sigma_src: kv.take_or("synth.sigma_src", d.sigma_src)?,
        sigma_tgt: kv.take_or("synth.sigma_tgt", d.sigma_tgt)?,
        drift_angle: kv.take_or("synth.drift_angle", d.drift_angle)?,
        prompt_jitter: kv.take_or("synth.prompt_jitter", d.prompt_jitter)?,
        temperature: kv.take_or("synth.temperature", d.temperature)?,
        views: kv.take_or("synth.views", d.views)?,
        view_noise: kv.take_or("synth.view_noise", d.view_noise)?,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn path_key(kv: &mut KeyValues, key: &str, base: &Path) -> Result<Option<PathBuf>> {
    Ok(kv.take::<PathBuf>(key)?.map(|p| base.join(p)))
}

fn file_sources(kv: &mut KeyValues, base: &Path) -> Result<FileSources> {
    let classes = kv.require("classes")?;
    let temperature = kv.take_or("temperature", DEFAULT_TEMPERATURE)?;
    let prototypes = match (
        path_key(kv, "prototypes", base)?,
        path_key(kv, "prompts", base)?,
    ) {
        (Some(p), None) => PrototypeSource::Matrix(p),
        (None, Some(p)) => PrototypeSource::Prompts(p),
        _ => {
            return Err(Error::Spec(
                "exactly one of `prototypes` and `prompts` is required".into(),
            ))
        }
    };
    let renormalize_prototypes = kv.take_or("renorm_prototypes", true)?;
    let support = match (
        path_key(kv, "support.features", base)?,
        path_key(kv, "support.labels", base)?,
    ) {
        (Some(f), Some(l)) => Some((f, l)),
        (None, None) => None,
        _ => return Err(Error::Spec("support needs both features and labels".into())),
    };
    let support_group = kv.take_or("support.augmentations", 1)?;
    let names: String = kv.require("domains")?;
    let mut domains = Vec::new();
    for name in names.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let key = |field: &str| format!("domain.{name}.{field}");
        domains.push(DomainFiles {
            name: name.to_string(),
            features: path_key(kv, &key("features"), base)?
                .ok_or_else(|| Error::Spec(format!("missing key `{}`", key("features"))))?,
            labels: path_key(kv, &key("labels"), base)?
                .ok_or_else(|| Error::Spec(format!("missing key `{}`", key("labels"))))?,
            views: path_key(kv, &key("views"), base)?,
        });
    }
    if domains.is_empty() {
        return Err(Error::Spec("`domains` lists no domain".into()));
    }
    Ok(FileSources {
        classes,
        temperature,
        prototypes,
        renormalize_prototypes,
        support,
        support_group,
        domains,
    })
}

impl FileSources {
    pub fn load(&self, with_views: bool) -> Result<(Benchmark, LoadWarnings)> {
        let mut warnings = Vec::new();
        let mut note = |path: &Path, report: NormReport| {
            if !report.out_of_tolerance.is_empty() {
                warnings.push((path.to_path_buf(), report));
            }
        };
        let prototypes = match &self.prototypes {
            PrototypeSource::Matrix(p) => {
                load_prototypes(p, self.temperature, self.renormalize_prototypes)?
            }
            PrototypeSource::Prompts(p) => {
                load_prompt_prototypes(p, self.temperature, self.renormalize_prototypes)?.0
            }
        };
        let support = match &self.support {
            Some((f, l)) => {
                let (d, r) = load_dataset(f, l, self.classes)?;
                note(f, r);
                Some(d)
            }
            None => None,
        };
        let mut domains = Vec::new();
        for df in &self.domains {
            let (data, r) = load_dataset(&df.features, &df.labels, self.classes)?;
            note(&df.features, r);
            let views = match (&df.views, with_views) {
                (Some(dir), true) => {
                    let (batches, labels) = read_views(dir)?;
                    if labels != data.labels() {
                        return Err(Error::Spec(format!(
                            "view labels in {} differ from domain `{}`",
                            dir.display(),
                            df.name
                        )));
                    }
                    let first = originals(&batches)?;
                    if first.rows() != data.len() {
                        return Err(Error::Spec(format!(
                            "{} view batches for {} samples",
                            first.rows(),
                            data.len()
                        )));
                    }
                    Some(batches)
                }
                (None, true) => {
                    return Err(Error::Spec(format!("tta needs `domain.{}.views`", df.name)))
                }
                _ => None,
            };
            domains.push(Domain {
                name: df.name.clone(),
                data,
                views,
            });
        }
        Ok((
            Benchmark {
                prototypes,
                support,
                support_group: self.support_group,
                domains,
            },
            warnings,
        ))
    }
}
