//! Checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CMTA"  u32 version  u32 len  <len bytes of config JSON>
//! u32 count, then per parameter:
//!     u32 len  <name>  u32 ndims  u32 dims[ndims]  f64 values[prod(dims)]
//! ```
//!
//! Parameters appear in [`ModelParams::visit`] order. Values are stored at
//! full precision, so a round trip is bitwise exact.

use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{CmtaError, Result};
use crate::fsio::write_atomic;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CMTA";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CmtaError::contract(format!("{v} does not fit the checkpoint's u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    let config = serde_json::to_string(cfg).map_err(|e| CmtaError::contract(e.to_string()))?;
    let named = params.named();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(config.as_bytes());
    put_u32(&mut out, named.len())?;
    for (name, t) in &named {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> CmtaError {
        CmtaError::Format {
            path: self.path.display().to_string(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err(self.bytes.len(), format!("truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a checkpoint. `path` is only used in error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.err(0, "bad magic, expected \"CMTA\""));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(r.err(4, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")?;
    let at = r.pos;
    let text = r.take(len, "config")?;
    let cfg: ModelConfig = serde_json::from_slice(text).map_err(|e| r.err(at, format!("config: {e}")))?;
    cfg.validate()?;

    let mut params = ModelParams::init(&cfg, 0)?;
    let expected = params.named().len();
    let count_at = r.pos;
    let count = r.u32("parameter count")?;
    if count != expected {
        return Err(r.err(count_at, format!("{count} parameters stored, config implies {expected}")));
    }
    let mut failure: Option<CmtaError> = None;
    params.visit_mut(&mut |name, slot| {
        if failure.is_some() {
            return;
        }
        let mut read = || -> Result<Tensor> {
            let at = r.pos;
            let len = r.u32("name length")?;
            let stored = r.take(len, "name")?;
            if stored != name.as_bytes() {
                return Err(r.err(at, format!("expected parameter {name:?}, found {:?}", String::from_utf8_lossy(stored))));
            }
            let at = r.pos;
            let ndims = r.u32("rank")?;
            let dims = (0..ndims).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
            if dims != slot.shape() {
                return Err(CmtaError::Format {
                    path: r.path.display().to_string(),
                    offset: at as u64,
                    reason: format!("parameter {name}: stored shape {dims:?}, config implies {:?}", slot.shape()),
                });
            }
            let at = r.pos;
            let raw = r.take(8 * slot.numel(), "values")?;
            let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(CmtaError::Integrity(format!(
                    "{}: parameter {name} has non-finite value at byte {}",
                    r.path.display(),
                    at + 8 * i
                )));
            }
            Tensor::param(values, &dims)
        };
        match read() {
            Ok(t) => *slot = t,
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    write_atomic(path, &encode_checkpoint(cfg, params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    decode_checkpoint(&std::fs::read(path)?, path)
}
