//! Datasets, prototypes and view batches on disk.

use std::fs;
use std::path::{Path, PathBuf};

use logitrange_core::dataset::{Dataset, NormReport};
use logitrange_core::tta::ViewBatch;
use logitrange_core::zeroshot::{build_prototypes, PrototypeSet};
use logitrange_core::Matrix;

use crate::error::{io_err, Error, Result};
use crate::format::{read_labels, read_matrix, write_labels, write_matrix};

/// Reads a feature/label pair, validates it and renormalizes the rows.
/// Rows whose norm was off by more than the tolerance are listed in the
/// returned report.
pub fn load_dataset(
    features: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    class_count: usize,
) -> Result<(Dataset, NormReport)> {
    let m = read_matrix(features)?;
    let y = read_labels(labels)?;
    Ok(Dataset::assemble(m, y, class_count)?)
}

/// Writes `<dir>/<name>.vlf` and `<dir>/<name>.vll`.
pub fn write_dataset(data: &Dataset, dir: impl AsRef<Path>, name: &str) -> Result<()> {
    let dir = dir.as_ref();
    write_matrix(data.features(), dir.join(format!("{name}.vlf")))?;
    write_labels(data.labels(), dir.join(format!("{name}.vll")))
}

/// A K-row VLF1 file of prototypes, class order = row order.
pub fn load_prototypes(
    path: impl AsRef<Path>,
    temperature: f64,
    renormalize: bool,
) -> Result<PrototypeSet> {
    let m = read_matrix(path)?;
    Ok(if renormalize {
        PrototypeSet::new(m, temperature)?
    } else {
        PrototypeSet::unnormalized(m, temperature)?
    })
}

/// Non-empty, non-comment lines of a text manifest with their 1-based numbers.
pub(crate) fn manifest_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn two_fields(path: &Path, line: usize, text: &str) -> Result<(String, String)> {
    let mut it = text.split_whitespace();
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok((a.to_string(), b.to_string())),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("expected two fields, got `{text}`"),
        }),
    }
}

fn relative(base: &Path, file: &str) -> PathBuf {
    base.parent().unwrap_or(Path::new(".")).join(file)
}

/// Prototypes from a prompt manifest: one `class_name file.vlf` line per
/// class, each file holding that class's prompt embeddings. Paths are
/// relative to the manifest.
pub fn load_prompt_prototypes(
    manifest: impl AsRef<Path>,
    temperature: f64,
    renormalize: bool,
) -> Result<(PrototypeSet, Vec<String>)> {
    let manifest = manifest.as_ref();
    let mut names = Vec::new();
    let mut prompts = Vec::new();
    for (line, text) in manifest_lines(manifest)? {
        let (name, file) = two_fields(manifest, line, &text)?;
        prompts.push(read_matrix(relative(manifest, &file))?);
        names.push(name);
    }
    Ok((build_prototypes(&prompts, temperature, renormalize)?, names))
}

pub const VIEW_MANIFEST: &str = "manifest.txt";

/// Writes one VLF1 file per batch plus `manifest.txt` with `label file`
/// lines.
pub fn write_views(batches: &[ViewBatch], labels: &[usize], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::new();
    for (i, (batch, y)) in batches.iter().zip(labels).enumerate() {
        let file = format!("{i:06}.vlf");
        write_matrix(batch.views(), dir.join(&file))?;
        manifest.push_str(&format!("{y} {file}\n"));
    }
    let path = dir.join(VIEW_MANIFEST);
    fs::write(&path, manifest).map_err(io_err(&path))
}

/// Reads a directory written by [`write_views`].
pub fn read_views(dir: impl AsRef<Path>) -> Result<(Vec<ViewBatch>, Vec<usize>)> {
    let manifest = dir.as_ref().join(VIEW_MANIFEST);
    let mut batches = Vec::new();
    let mut labels = Vec::new();
    for (line, text) in manifest_lines(&manifest)? {
        let (label, file) = two_fields(&manifest, line, &text)?;
        let label = label.parse().map_err(|_| Error::Parse {
            path: manifest.clone(),
            line,
            message: format!("bad label `{label}`"),
        })?;
        batches.push(ViewBatch::new(read_matrix(relative(&manifest, &file))?)?);
        labels.push(label);
    }
    Ok((batches, labels))
}

/// Row 0 of every batch, i.e. the un-augmented samples.
pub fn originals(batches: &[ViewBatch]) -> Result<Matrix> {
    let rows: Vec<&[f64]> = batches.iter().map(|b| b.original()).collect();
    Ok(Matrix::from_rows(&rows)?)
}
