//! Spec execution and golden-file comparison.

use std::fs;
use std::path::Path;

use logitrange_core::pipeline::{run_experiment, ExperimentOutcome};

use crate::error::{io_err, Result};
use crate::report::{bin_rows, to_csv, write_csv, BinRow, ReportRow};
use crate::spec::{LoadWarnings, RunSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ReportRow>,
    /// Reliability bins per dataset, in report order.
    pub bins: Vec<(String, Vec<BinRow>)>,
    pub outcome: ExperimentOutcome,
    pub warnings: LoadWarnings,
}

impl RunOutput {
    pub fn report_csv(&self) -> Vec<u8> {
        to_csv(&self.rows)
    }

    /// Writes `<dir>/<method>_<calib>_<dataset>_bins.csv` per dataset.
    pub fn write_plot_data(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (row, (dataset, bins)) in self.rows.iter().zip(&self.bins) {
            let name = format!("{}_{}_{}_bins.csv", row.method, row.calib, dataset);
            write_csv(bins, &dir.join(name))?;
        }
        Ok(())
    }
}

pub fn run_spec(spec: &RunSpec) -> Result<RunOutput> {
    let (bench, warnings) = spec.benchmark()?;
    let outcome = run_experiment(&spec.experiment, &bench)?;
    let e = &spec.experiment;
    let rows = outcome
        .reports
        .iter()
        .map(|d| ReportRow::new(e.method.name(), e.calib.name(), &d.domain, &d.report))
        .collect();
    let bins = outcome
        .reports
        .iter()
        .map(|d| (d.domain.clone(), bin_rows(&d.report.bins)))
        .collect();
    Ok(RunOutput {
        rows,
        bins,
        outcome,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoldenStatus {
    Match,
    Mismatch,
    /// The golden file was (re)written.
    Blessed,
}

/// Compares `actual` with the golden file byte for byte. With `bless`, the
/// golden file is overwritten instead; a missing golden file is a mismatch
/// otherwise.
pub fn check_golden(actual: &[u8], golden: &Path, bless: bool) -> Result<GoldenStatus> {
    if bless {
        if let Some(dir) = golden.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(golden, actual).map_err(io_err(golden))?;
        return Ok(GoldenStatus::Blessed);
    }
    match fs::read(golden) {
        Ok(expected) if expected == actual => Ok(GoldenStatus::Match),
        Ok(_) => Ok(GoldenStatus::Mismatch),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(GoldenStatus::Mismatch),
        Err(e) => Err(io_err(golden)(e)),
    }
}
