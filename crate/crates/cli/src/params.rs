//! Trained adapters on disk: a directory of VLF1 matrices plus
//! `manifest.txt` naming the method, hyperparameters and temperature.
//! Matrices are stored in single precision, so a reloaded adapter matches
//! the in-memory one only to f32 accuracy.

use std::fs;
use std::path::Path;

use logitrange_core::adapters::{AdapterParams, Method};
use logitrange_core::matrix::l2_norm;
use logitrange_core::pipeline::Calib;
use logitrange_core::zeroshot::PrototypeSet;
use logitrange_core::Matrix;

use crate::error::{io_err, Error, Result};
use crate::format::{read_matrix, write_matrix};
use crate::kv::KeyValues;

pub const MANIFEST: &str = "manifest.txt";
const PROTOTYPES: &str = "prototypes.vlf";
const FORMAT_VERSION: u32 = 1;

/// An adapter together with the prototypes and temperature it was trained
/// against, and the calibration used during training.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedAdapter {
    pub params: AdapterParams,
    pub prototypes: PrototypeSet,
    pub calib: Calib,
}

fn row(v: &[f64]) -> Matrix {
    Matrix::new(1, v.len(), v.to_vec()).expect("row length")
}

fn single_row(m: Matrix, name: &str) -> Result<Vec<f64>> {
    if m.rows() != 1 {
        return Err(Error::Spec(format!(
            "{name} must have one row, has {}",
            m.rows()
        )));
    }
    Ok(m.into_vec())
}

pub fn save_adapter(saved: &SavedAdapter, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut kv = KeyValues::with_origin(dir.join(MANIFEST));
    kv.set("format", FORMAT_VERSION);
    kv.set("method", saved.params.method());
    kv.set("temperature", saved.prototypes.temperature());
    kv.set("calib", saved.calib);
    let unit = saved
        .prototypes
        .prototypes()
        .row_iter()
        .all(|r| (l2_norm(r) - 1.0).abs() < 1e-6);
    kv.set("unit_prototypes", unit);
    write_matrix(saved.prototypes.prototypes(), dir.join(PROTOTYPES))?;
    match &saved.params {
        AdapterParams::LinearProbe { weights } => {
            write_matrix(weights, dir.join("weights.vlf"))?;
        }
        AdapterParams::ClipAdapter {
            down,
            down_bias,
            up,
            up_bias,
            blend,
        } => {
            kv.set("blend", blend);
            write_matrix(down, dir.join("down.vlf"))?;
            write_matrix(&row(down_bias), dir.join("down_bias.vlf"))?;
            write_matrix(up, dir.join("up.vlf"))?;
            write_matrix(&row(up_bias), dir.join("up_bias.vlf"))?;
        }
        AdapterParams::TaskRes { residual, scale } => {
            kv.set("scale", scale);
            write_matrix(residual, dir.join("residual.vlf"))?;
        }
        AdapterParams::TipAdapter {
            cache_keys,
            cache_values,
            sharpness,
            blend,
        } => {
            kv.set("sharpness", sharpness);
            kv.set("blend", blend);
            write_matrix(cache_keys, dir.join("cache_keys.vlf"))?;
            write_matrix(cache_values, dir.join("cache_values.vlf"))?;
        }
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, kv.render()).map_err(io_err(&path))
}

pub fn load_adapter(dir: impl AsRef<Path>) -> Result<SavedAdapter> {
    let dir = dir.as_ref();
    let mut kv = KeyValues::read(dir.join(MANIFEST))?;
    let version: u32 = kv.require("format")?;
    if version != FORMAT_VERSION {
        return Err(Error::Spec(format!("unsupported adapter format {version}")));
    }
    let method: Method = kv.require("method")?;
    let temperature: f64 = kv.require("temperature")?;
    let calib: Calib = kv.require("calib")?;
    let unit: bool = kv.require("unit_prototypes")?;
    let raw = read_matrix(dir.join(PROTOTYPES))?;
    // renormalizing unit prototypes absorbs the f32 rounding
    let prototypes = if unit {
        PrototypeSet::new(raw, temperature)?
    } else {
        PrototypeSet::unnormalized(raw, temperature)?
    };
    let m = |name: &str| read_matrix(dir.join(format!("{name}.vlf")));
    let params = match method {
        Method::LinearProbe => AdapterParams::LinearProbe {
            weights: m("weights")?,
        },
        Method::ClipAdapter => AdapterParams::ClipAdapter {
            down: m("down")?,
            down_bias: single_row(m("down_bias")?, "down_bias")?,
            up: m("up")?,
            up_bias: single_row(m("up_bias")?, "up_bias")?,
            blend: kv.require("blend")?,
        },
        Method::TaskRes => AdapterParams::TaskRes {
            residual: m("residual")?,
            scale: kv.require("scale")?,
        },
        Method::TipAdapter => AdapterParams::TipAdapter {
            cache_keys: m("cache_keys")?,
            cache_values: m("cache_values")?,
            sharpness: kv.require("sharpness")?,
            blend: kv.require("blend")?,
        },
    };
    kv.finish()?;
    params.check_against(&prototypes)?;
    Ok(SavedAdapter {
        params,
        prototypes,
        calib,
    })
}
