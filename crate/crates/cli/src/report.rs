//! CSV output: one report row per (method, calibration, dataset) and
//! per-bin reliability tables.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use logitrange_core::metrics::{BinRecord, EvalReport};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const REPORT_HEADER: &str = "method,calib,dataset,acc,ece,mean_logit_norm,mean_logit_range,n";
pub const BINS_HEADER: &str = "bin,lo,hi,count,mean_conf,mean_acc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub calib: String,
    pub dataset: String,
    pub acc: f64,
    pub ece: f64,
    pub mean_logit_norm: f64,
    pub mean_logit_range: f64,
    pub n: usize,
}

impl ReportRow {
    pub fn new(method: &str, calib: &str, dataset: &str, r: &EvalReport) -> Self {
        Self {
            method: method.to_string(),
            calib: calib.to_string(),
            dataset: dataset.to_string(),
            acc: r.accuracy,
            ece: r.ece,
            mean_logit_norm: r.mean_logit_norm,
            mean_logit_range: r.mean_logit_range,
            n: r.sample_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    /// 1-based bin number.
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_conf: f64,
    pub mean_acc: f64,
}

pub fn bin_rows(bins: &[BinRecord]) -> Vec<BinRow> {
    bins.iter()
        .enumerate()
        .map(|(i, b)| BinRow {
            bin: i + 1,
            lo: b.lo,
            hi: b.hi,
            count: b.count,
            mean_conf: b.mean_conf,
            mean_acc: b.mean_acc,
        })
        .collect()
}

/// Serializes rows, header first.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    w.into_inner().expect("in-memory csv flush")
}

pub fn from_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8], origin: &Path) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|source| Error::Csv {
            path: origin.to_path_buf(),
            source,
        })
}

/// Writes `rows` to `path`, or to stdout when `path` is `-`.
pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let bytes = to_csv(rows);
    if path == Path::new("-") {
        std::io::stdout().write_all(&bytes).map_err(io_err(path))
    } else {
        File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(io_err(path))
    }
}
