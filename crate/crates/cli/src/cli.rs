//! Command-line interface. `main.rs` only forwards to [`main`].

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use logitrange_core::adapters::{train_adapter, AdapterHyper, Method, TrainConfig};
use logitrange_core::dataset::{Dataset, NormReport};
use logitrange_core::metrics::{evaluate, logit_stats, EvalReport};
use logitrange_core::optim::LrSchedule;
use logitrange_core::pipeline::{
    apply_sals, run_experiment, softmax_rows, Benchmark, Calib, Domain, ExpMethod, ExperimentSpec,
};
use logitrange_core::synth::synth_generate;
use logitrange_core::synth::synth_views;
use logitrange_core::zeroshot::{zs_logits, zs_range_table, PrototypeSet, DEFAULT_TEMPERATURE};
use logitrange_core::Matrix;
use serde::Serialize;

use crate::data::{
    load_dataset, load_prompt_prototypes, load_prototypes, originals, read_views, write_dataset,
    write_views,
};
use crate::format::{read_labels, read_matrix, write_matrix};
use crate::kv::KeyValues;
use crate::params::{load_adapter, save_adapter, SavedAdapter};
use crate::report::{bin_rows, write_csv, ReportRow};
use crate::run::{check_golden, run_spec, GoldenStatus};
use crate::spec::{synth_config, RunSpec};

#[derive(Debug, Parser)]
#[command(
    name = "logitrange",
    version,
    about = "Logit-range calibration for adapted vision-language classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic drift benchmark as VLF1/VLL1 files.
    SynthGen(SynthGenArgs),
    /// Zero-shot evaluation of a labelled feature file.
    Zeroshot(ZeroshotArgs),
    /// Train an adapter on a support set and save it.
    TrainAdapter(TrainArgs),
    /// Evaluate a saved adapter, optionally with SaLS.
    Eval(EvalArgs),
    /// Rescale a logit file into zero-shot ranges.
    Sals(SalsArgs),
    /// Test-time adaptation over view batches.
    Tta(TtaArgs),
    /// Mean logit norm and range of a logit file.
    LogitStats(LogitStatsArgs),
    /// Reliability bins of a logit file.
    Reliability(ReliabilityArgs),
    /// Run an experiment spec file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct PrototypeArgs {
    /// K-row VLF1 prototype matrix.
    #[arg(long, conflicts_with = "prompts", required_unless_present = "prompts")]
    pub prototypes: Option<PathBuf>,
    /// Prompt manifest (`class_name file.vlf` per line).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    /// Keep prototype rows as stored instead of renormalizing them.
    #[arg(long)]
    pub no_renorm_prototypes: bool,
}

impl PrototypeArgs {
    fn load(&self) -> anyhow::Result<PrototypeSet> {
        let renorm = !self.no_renorm_prototypes;
        Ok(match (&self.prototypes, &self.prompts) {
            (Some(p), _) => load_prototypes(p, self.temperature, renorm)?,
            (None, Some(m)) => load_prompt_prototypes(m, self.temperature, renorm)?.0,
            (None, None) => bail!("--prototypes or --prompts is required"),
        })
    }
}

#[derive(Debug, Args)]
pub struct LabelledArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Dataset name in the report; defaults to the feature file stem.
    #[arg(long)]
    pub dataset: Option<String>,
}

impl LabelledArgs {
    fn name(&self) -> String {
        self.dataset.clone().unwrap_or_else(|| {
            self.features
                .file_stem()
                .map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
        })
    }

    fn load(&self, classes: usize) -> anyhow::Result<Dataset> {
        let (d, report) = load_dataset(&self.features, &self.labels, classes)?;
        warn_norms(&self.features, &report);
        Ok(d)
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, default_value_t = logitrange_core::metrics::DEFAULT_BINS)]
    pub bins: usize,
    /// Report CSV path, `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Directory for per-bin reliability CSVs.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generator overrides such as `synth.sigma_tgt=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Also write TTA view batches for both test domains.
    #[arg(long)]
    pub views: bool,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[command(flatten)]
    pub data: LabelledArgs,
    #[command(flatten)]
    pub protos: PrototypeArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Also write the logits as VLF1.
    #[arg(long)]
    pub logits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub method: Method,
    #[command(flatten)]
    pub data: LabelledArgs,
    #[command(flatten)]
    pub protos: PrototypeArgs,
    /// Training-time calibration: none, zs-norm or penalty.
    #[arg(long, default_value = "none")]
    pub calib: Calib,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value = "cosine")]
    pub schedule: LrSchedule,
    /// Consecutive support rows that are augmented copies of one shot;
    /// tip-f averages each run into one cache key.
    #[arg(long, default_value_t = 1)]
    pub support_augmentations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the adapter.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss, range and norm as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `train-adapter`.
    #[arg(long)]
    pub params: PathBuf,
    #[command(flatten)]
    pub data: LabelledArgs,
    /// Rescale predictions into the zero-shot range.
    #[arg(long)]
    pub sals: bool,
    #[arg(long, default_value_t = 1.0)]
    pub range_factor: f64,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long)]
    pub logits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SalsArgs {
    #[arg(long)]
    pub logits: PathBuf,
    /// Zero-shot logits of the same samples; their row ranges are the targets.
    #[arg(long)]
    pub zs_logits: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub range_factor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TtaArgs {
    /// Directory with view batches and `manifest.txt`.
    #[arg(long)]
    pub views: PathBuf,
    #[command(flatten)]
    pub protos: PrototypeArgs,
    #[arg(long, default_value = "none")]
    pub calib: Calib,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Fraction of lowest-entropy views kept for the objective.
    #[arg(long, default_value_t = 0.1)]
    pub select_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub range_factor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "views")]
    pub dataset: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct LogitStatsArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    /// Per-row norm and range as CSV.
    #[arg(long)]
    pub per_sample: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReliabilityArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = logitrange_core::metrics::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub spec: PathBuf,
    /// Spec overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub calib: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub range_factor: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    /// Compare the report with this golden CSV; exit non-zero on mismatch.
    #[arg(long)]
    pub check: Option<PathBuf>,
    /// Overwrite the `--check` file instead of comparing.
    #[arg(long, requires = "check")]
    pub bless: bool,
}

fn warn_norms(path: &Path, report: &NormReport) {
    if !report.out_of_tolerance.is_empty() {
        eprintln!(
            "warning: {}: {} rows outside unit norm tolerance were renormalized (first: row {} norm {})",
            path.display(),
            report.out_of_tolerance.len(),
            report.out_of_tolerance[0].0,
            report.out_of_tolerance[0].1,
        );
    }
}

fn finish_report(
    method: &str,
    calib: &str,
    dataset: &str,
    report: &EvalReport,
    output: &OutputArgs,
) -> anyhow::Result<()> {
    let row = ReportRow::new(method, calib, dataset, report);
    if let Some(dir) = &output.plot_data {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{method}_{calib}_{dataset}_bins.csv"));
        write_csv(&bin_rows(&report.bins), &path)?;
    }
    write_csv(&[row], &output.out)?;
    Ok(())
}

fn evaluate_logits(logits: &Matrix, labels: &[usize], bins: usize) -> anyhow::Result<EvalReport> {
    let probs = softmax_rows(logits);
    Ok(evaluate(&probs, logits, labels, bins)?)
}

fn synth_gen(a: &SynthGenArgs) -> anyhow::Result<()> {
    let mut kv = KeyValues::default();
    for s in &a.set {
        kv.apply_override(s)?;
    }
    let cfg = synth_config(&mut kv, a.seed)?;
    kv.finish()?;
    let b = synth_generate(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_dataset(&b.support, &a.out, "support")?;
    write_dataset(&b.source, &a.out, "source")?;
    write_dataset(&b.target, &a.out, "target")?;
    write_matrix(b.prototypes.prototypes(), a.out.join("prototypes.vlf"))?;
    let mut spec = format!(
        "# generated by synth-gen, seed {}\ndata = files\nclasses = {}\ntemperature = {}\nprototypes = prototypes.vlf\nsupport.features = support.vlf\nsupport.labels = support.vll\nsupport.augmentations = {}\ndomains = source,target\n",
        cfg.seed, cfg.class_count, cfg.temperature, cfg.augmentations
    );
    for (i, (name, data)) in [("source", &b.source), ("target", &b.target)]
        .into_iter()
        .enumerate()
    {
        spec.push_str(&format!(
            "domain.{name}.features = {name}.vlf\ndomain.{name}.labels = {name}.vll\n"
        ));
        if a.views {
            let batches = synth_views(&cfg, data, i as u64)?;
            write_views(&batches, data.labels(), a.out.join(format!("{name}_views")))?;
            spec.push_str(&format!("domain.{name}.views = {name}_views\n"));
        }
    }
    let path = a.out.join("data.spec");
    fs::write(&path, spec).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn zeroshot(a: &ZeroshotArgs) -> anyhow::Result<()> {
    let protos = a.protos.load()?;
    let data = a.data.load(protos.class_count())?;
    let logits = zs_logits(data.features(), &protos)?;
    if let Some(p) = &a.logits {
        write_matrix(&logits, p)?;
    }
    let report = evaluate_logits(&logits, data.labels(), a.output.bins)?;
    finish_report("zeroshot", "none", &a.data.name(), &report, &a.output)
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    loss: f64,
    mean_logit_range: f64,
    mean_logit_norm: f64,
}

fn train(a: &TrainArgs) -> anyhow::Result<()> {
    if a.calib == Calib::Sals {
        bail!("sals is applied at evaluation time; train with --calib none and use `eval --sals`");
    }
    let protos = a.protos.load()?;
    let support = a.data.load(protos.class_count())?;
    let ranges = zs_range_table(&zs_logits(support.features(), &protos)?);
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        momentum: a.momentum,
        loss_mode: a.calib.loss_mode(),
        lambda: a.lambda,
        seed: a.seed,
        schedule: a.schedule,
        hyper: AdapterHyper {
            tip_cache_group: a.support_augmentations,
            ..AdapterHyper::default()
        },
    };
    let (params, history) = train_adapter(a.method, &support, &protos, &ranges, &config)?;
    save_adapter(
        &SavedAdapter {
            params,
            prototypes: protos,
            calib: a.calib,
        },
        &a.out,
    )?;
    if let Some(path) = &a.history {
        let rows: Vec<HistoryRow> = (0..history.loss.len())
            .map(|i| HistoryRow {
                epoch: i + 1,
                loss: history.loss[i],
                mean_logit_range: history.mean_logit_range[i],
                mean_logit_norm: history.mean_logit_norm[i],
            })
            .collect();
        write_csv(&rows, path)?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let saved = load_adapter(&a.params)?;
    if a.range_factor != 1.0 && !a.sals {
        bail!("--range-factor requires --sals");
    }
    let data = a.data.load(saved.prototypes.class_count())?;
    let mut logits = saved.params.logits(data.features(), &saved.prototypes)?;
    if a.sals || saved.calib.rescales_at_inference() {
        let ranges = zs_range_table(&zs_logits(data.features(), &saved.prototypes)?);
        logits = apply_sals(&logits, &ranges, a.range_factor)?;
    }
    if let Some(p) = &a.logits {
        write_matrix(&logits, p)?;
    }
    let report = evaluate_logits(&logits, data.labels(), a.output.bins)?;
    let calib = if a.sals { Calib::Sals } else { saved.calib };
    finish_report(
        saved.params.method().name(),
        calib.name(),
        &a.data.name(),
        &report,
        &a.output,
    )
}

fn sals_cmd(a: &SalsArgs) -> anyhow::Result<()> {
    let logits = read_matrix(&a.logits)?;
    let zs = read_matrix(&a.zs_logits)?;
    if zs.rows() != logits.rows() {
        bail!(
            "{} logit rows but {} zero-shot rows",
            logits.rows(),
            zs.rows()
        );
    }
    let out = apply_sals(&logits, &zs_range_table(&zs), a.range_factor)?;
    write_matrix(&out, &a.out)?;
    Ok(())
}

fn tta(a: &TtaArgs) -> anyhow::Result<()> {
    let protos = a.protos.load()?;
    let (batches, labels) = read_views(&a.views)?;
    let data = Dataset::new(originals(&batches)?, labels, protos.class_count())?;
    let bench = Benchmark {
        prototypes: protos,
        support: None,
        support_group: 1,
        domains: vec![Domain {
            name: a.dataset.clone(),
            data,
            views: Some(batches),
        }],
    };
    let mut spec = ExperimentSpec::new(ExpMethod::Tta, a.calib).with_seed(a.seed);
    spec.range_factor = a.range_factor;
    spec.bins = a.output.bins;
    spec.tta.learning_rate = a.lr;
    spec.tta.steps = a.steps;
    spec.tta.select_fraction = a.select_fraction;
    spec.tta.weight_decay = a.weight_decay;
    spec.tta.lambda = a.lambda;
    let outcome = run_experiment(&spec, &bench)?;
    let report = &outcome.reports[0].report;
    finish_report("tta", a.calib.name(), &a.dataset, report, &a.output)
}

#[derive(Serialize)]
struct StatsRow {
    mean_logit_norm: f64,
    mean_logit_range: f64,
    n: usize,
}

#[derive(Serialize)]
struct SampleStatsRow {
    index: usize,
    norm: f64,
    range: f64,
}

fn stats(a: &LogitStatsArgs) -> anyhow::Result<()> {
    let logits = read_matrix(&a.logits)?;
    let s = logit_stats(&logits);
    if let Some(path) = &a.per_sample {
        let rows: Vec<SampleStatsRow> = s
            .norms
            .iter()
            .zip(&s.ranges)
            .enumerate()
            .map(|(index, (&norm, &range))| SampleStatsRow { index, norm, range })
            .collect();
        write_csv(&rows, path)?;
    }
    write_csv(
        &[StatsRow {
            mean_logit_norm: s.mean_norm,
            mean_logit_range: s.mean_range,
            n: logits.rows(),
        }],
        &a.out,
    )?;
    Ok(())
}

fn reliability(a: &ReliabilityArgs) -> anyhow::Result<()> {
    let logits = read_matrix(&a.logits)?;
    let labels = read_labels(&a.labels)?;
    if labels.len() != logits.rows() {
        bail!("{} logit rows but {} labels", logits.rows(), labels.len());
    }
    let report = evaluate_logits(&logits, &labels, a.bins)?;
    write_csv(&bin_rows(&report.bins), &a.out)?;
    Ok(())
}

fn run(a: &RunArgs) -> anyhow::Result<bool> {
    let mut overrides = a.set.clone();
    let flags = [
        ("method", a.method.clone()),
        ("calib", a.calib.clone()),
        ("seed", a.seed.map(|v| v.to_string())),
        ("range_factor", a.range_factor.map(|v| v.to_string())),
        ("bins", a.bins.map(|v| v.to_string())),
    ];
    overrides.extend(
        flags
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| format!("{k}={v}"))),
    );
    let spec = RunSpec::load(&a.spec, &overrides)?;
    let out = run_spec(&spec)?;
    for (path, report) in &out.warnings {
        warn_norms(path, report);
    }
    if let Some(dir) = &a.plot_data {
        out.write_plot_data(dir)?;
    }
    write_csv(&out.rows, &a.out)?;
    if let Some(golden) = &a.check {
        match check_golden(&out.report_csv(), golden, a.bless)? {
            GoldenStatus::Match => eprintln!("golden {}: match", golden.display()),
            GoldenStatus::Blessed => eprintln!("golden {}: blessed", golden.display()),
            GoldenStatus::Mismatch => {
                eprintln!("golden {}: MISMATCH", golden.display());
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Runs one parsed command. `Ok(false)` means a golden mismatch.
pub fn execute(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::SynthGen(a) => synth_gen(a).context("synth-gen")?,
        Command::Zeroshot(a) => zeroshot(a).context("zeroshot")?,
        Command::TrainAdapter(a) => train(a).context("train-adapter")?,
        Command::Eval(a) => eval(a).context("eval")?,
        Command::Sals(a) => sals_cmd(a).context("sals")?,
        Command::Tta(a) => tta(a).context("tta")?,
        Command::LogitStats(a) => stats(a).context("logit-stats")?,
        Command::Reliability(a) => reliability(a).context("reliability")?,
        Command::Run(a) => return run(a).context("run"),
    }
    Ok(true)
}

pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => std::process::ExitCode::SUCCESS,
        Ok(false) => std::process::ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::from(2)
        }
    }
}
