//! VLF1 matrices and VLL1 label vectors.
//!
//! VLF1: `b"VLF1"`, u32 LE rows, u32 LE cols, then `rows * cols` f32 LE
//! values in row-major order. VLL1: `b"VLL1"`, u32 LE count, then `count`
//! u32 LE labels. Both are read whole; trailing bytes are rejected.

use std::fs;
use std::path::Path;

use logitrange_core::Matrix;

use crate::error::{io_err, Error, FormatError, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"VLF1";
pub const LABEL_MAGIC: &[u8; 4] = b"VLL1";

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn check_magic(bytes: &[u8], magic: &'static [u8; 4]) -> Result<(), FormatError> {
    let found = &bytes[..bytes.len().min(4)];
    if found != magic {
        return Err(FormatError::Magic {
            expected: std::str::from_utf8(magic).expect("ascii magic"),
            found: found.to_vec(),
        });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, expected: u64) -> Result<(), FormatError> {
    let found = (bytes.len() - header) as u64;
    if found != expected {
        return Err(FormatError::Payload { expected, found });
    }
    Ok(())
}

/// Serializes `m` as VLF1. Values are narrowed to single precision.
pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.as_slice().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix, FormatError> {
    check_magic(bytes, MATRIX_MAGIC)?;
    if bytes.len() < 12 {
        return Err(FormatError::Header(format!(
            "header needs 12 bytes, file has {}",
            bytes.len()
        )));
    }
    let (rows, cols) = (le_u32(bytes, 4) as usize, le_u32(bytes, 8) as usize);
    if rows == 0 || cols == 0 {
        return Err(FormatError::Header(format!("zero dimension {rows}x{cols}")));
    }
    check_payload(bytes, 12, 4 * rows as u64 * cols as u64)?;
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    Ok(Matrix::new(rows, cols, data).expect("payload length checked"))
}

pub fn encode_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * labels.len());
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for &y in labels {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

/// An empty label file is valid here; dataset assembly rejects it.
pub fn decode_labels(bytes: &[u8]) -> Result<Vec<usize>, FormatError> {
    check_magic(bytes, LABEL_MAGIC)?;
    if bytes.len() < 8 {
        return Err(FormatError::Header(format!(
            "header needs 8 bytes, file has {}",
            bytes.len()
        )));
    }
    let count = le_u32(bytes, 4) as u64;
    check_payload(bytes, 8, 4 * count)?;
    Ok(bytes[8..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("four bytes")) as usize)
        .collect())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

fn with_path<T>(path: &Path, r: Result<T, FormatError>) -> Result<T> {
    r.map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    with_path(path, decode_matrix(&read_bytes(path)?))
}

pub fn write_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(m)).map_err(io_err(path))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    with_path(path, decode_labels(&read_bytes(path)?))
}

pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(labels)).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_size() {
        let bytes = encode_matrix(&Matrix::zeros(2, 3));
        assert_eq!(bytes.len(), 36);
        assert_eq!(&bytes[..4], b"VLF1");
        assert_eq!(&bytes[4..12], &[2, 0, 0, 0, 3, 0, 0, 0]);
    }

    #[test]
    fn single_row_layout() {
        let m = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &0.0f32.to_le_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_matrix(&Matrix::zeros(1, 2));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_matrix(&bytes),
            Err(FormatError::Magic { .. })
        ));
        assert!(matches!(
            decode_labels(b"VLF1\0\0\0\0"),
            Err(FormatError::Magic { .. })
        ));
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = encode_matrix(&Matrix::zeros(2, 2));
        let err = decode_matrix(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(
            err,
            FormatError::Payload {
                expected: 16,
                found: 15
            }
        );
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_matrix(&long),
            Err(FormatError::Payload { .. })
        ));
        assert!(matches!(
            decode_matrix(b"VLF1\x01"),
            Err(FormatError::Header(_))
        ));
    }

    #[test]
    fn zero_dims_rejected() {
        let mut bytes = b"VLF1".to_vec();
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        assert!(matches!(decode_matrix(&bytes), Err(FormatError::Header(_))));
    }

    #[test]
    fn labels_round_trip() {
        let bytes = encode_labels(&[0, 1, 2]);
        assert_eq!(bytes.len(), 20);
        assert_eq!(decode_labels(&bytes).unwrap(), vec![0, 1, 2]);
        assert_eq!(
            decode_labels(&encode_labels(&[])).unwrap(),
            Vec::<usize>::new()
        );
    }

    #[test]
    fn empty_path_is_io_error() {
        let err = write_matrix(&Matrix::zeros(1, 2), "").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
