//! Binary parameter container.
//!
//! Layout, all integers `u32` little-endian:
//! magic `NVITCKPT`, version, config text length and bytes (`key=value`
//! lines), array count, then per array its name length and bytes, rank,
//! dimensions and `f32` little-endian values.

use std::path::Path;

use super::{ViTConfig, ViTParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NVITCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_params<T: Scalar>(params: &ViTParams<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * params.num_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = params.config().to_text();
    push_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    push_u32(&mut out, params.len());
    for (name, t) in params.iter() {
        push_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, t.ndim());
        for &d in t.shape() {
            push_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)?;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
    }
}

/// Parses a container. With `expected`, a differing stored config is a
/// [`Error::ConfigMismatch`] naming every differing field.
pub fn decode_params<T: Scalar>(bytes: &[u8], expected: Option<&ViTConfig>) -> Result<ViTParams<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic").ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config = ViTConfig::from_text(r.text("config")?)?;
    if let Some(want) = expected {
        let diff = want.diff(&config);
        if !diff.is_empty() {
            return Err(Error::ConfigMismatch(diff.join(", ")));
        }
    }
    let count = r.u32("array count")?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.text("array name")?.to_string();
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| Error::Format(format!("{name}: shape overflows")))?;
        let raw = r.take(len.saturating_mul(4), &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    ViTParams::from_tensors(config, tensors)
}

pub fn save_params<T: Scalar>(params: &ViTParams<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Scalar>(path: &Path, expected: Option<&ViTConfig>) -> Result<ViTParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, expected)
}
