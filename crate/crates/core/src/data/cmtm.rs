//! `CMTM` dense matrix files.
//!
//! Layout (little-endian): magic `b"CMTM"`, `u32` rows, `u32` cols, then
//! `rows·cols` `f32` values in row-major order. Nothing may follow the
//! payload.

use std::path::Path;

use crate::error::{CmtaError, Result};
use crate::fsio::write_atomic;

pub const MAGIC: &[u8; 4] = b"CMTM";
const HEADER_LEN: usize = 12;

/// Row-major `f64` matrix as held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows * cols != data.len() {
            return Err(CmtaError::dim("Matrix::new", &[rows, cols], &[data.len()]));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> CmtaError {
    CmtaError::Format {
        path: path.display().to_string(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Encodes a matrix; values are narrowed to `f32`.
pub fn encode(m: &Matrix) -> Result<Vec<u8>> {
    let dims = (u32::try_from(m.rows), u32::try_from(m.cols));
    let (Ok(rows), Ok(cols)) = dims else {
        return Err(CmtaError::contract(format!("matrix {}×{} too large for CMTM", m.rows, m.cols)));
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in &m.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes and validates a CMTM buffer; `path` is only used in errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = &bytes[..bytes.len().min(4)];
        return Err(format_err(path, 0, format!("bad magic {found:?}, expected \"CMTM\"")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, bytes.len(), "truncated header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(4), word(8));
    if rows == 0 || cols == 0 {
        return Err(format_err(path, 4, format!("empty matrix {rows}×{cols}")));
    }
    let want = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| format_err(path, 4, format!("dimensions {rows}×{cols} overflow")))?;
    if bytes.len() < want {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: {rows}×{cols} needs {want} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > want {
        return Err(format_err(path, want, format!("{} trailing bytes after payload", bytes.len() - want)));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(CmtaError::Integrity(format!(
                "{}: non-finite value {v} at row {}, col {} (byte {})",
                path.display(),
                i / cols,
                i % cols,
                HEADER_LEN + 4 * i
            )));
        }
        data.push(f64::from(v));
    }
    Ok(Matrix { rows, cols, data })
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path)?;
    decode(&bytes, path)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &encode(m)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("m.cmtm")
    }

    #[test]
    fn round_trip() {
        let m = Matrix::new(2, 3, vec![1.0, -2.5, 0.125, 3.0, 0.0, 1e-3f32 as f64]).unwrap();
        assert_eq!(decode(&encode(&m).unwrap(), p()).unwrap(), m);
    }

    #[test]
    fn header_bytes() {
        let m = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let b = encode(&m).unwrap();
        assert_eq!(&b[..12], &[b'C', b'M', b'T', b'M', 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut b = encode(&Matrix::new(1, 1, vec![1.0]).unwrap()).unwrap();
        b[0] = b'X';
        assert!(matches!(decode(&b, p()), Err(CmtaError::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload_reports_length() {
        let b = encode(&Matrix::new(2, 2, vec![1.0; 4]).unwrap()).unwrap();
        assert!(matches!(decode(&b[..20], p()), Err(CmtaError::Format { offset: 20, .. })));
        assert!(matches!(decode(&b[..7], p()), Err(CmtaError::Format { offset: 7, .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = encode(&Matrix::new(1, 1, vec![1.0]).unwrap()).unwrap();
        b.push(0);
        assert!(matches!(decode(&b, p()), Err(CmtaError::Format { offset: 16, .. })));
    }

    #[test]
    fn nan_is_integrity_error() {
        let mut b = encode(&Matrix::new(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        b[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&b, p()), Err(CmtaError::Integrity(_))));
    }
}
