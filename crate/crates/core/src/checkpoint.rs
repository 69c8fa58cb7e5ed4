//! Binary files for model checkpoints and adversarial batches.
//!
//! Checkpoint layout (all integers and reals little-endian):
//!
//! ```text
//! magic     8 bytes  "FLDPMLP\0"
//! version   u32      1
//! n_dims    u32
//! dims      n_dims × u64
//! per layer, in order: weights (out × in, row-major) as f64, then bias as f64
//! ```
//!
//! Adversarial batch layout:
//!
//! ```text
//! magic     8 bytes  "FLDPADV\0"
//! version   u32      1
//! n         u64      rows
//! d         u64      features per row
//! inputs    n × d f64, row-major
//! labels    n × u32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{LabeledBatch, MlpParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FLDPMLP\0";
pub const ADVERSARIAL_MAGIC: &[u8; 8] = b"FLDPADV\0";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("file truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != magic {
            return Err(Error::Format(format!("bad magic {got:?}, expected {magic:?}")));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.at)));
        }
        Ok(())
    }
}

pub fn encode_params(params: &MlpParams) -> Vec<u8> {
    let dims = params.layer_dims();
    let mut out = Vec::with_capacity(16 + 8 * dims.len() + 8 * params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in params.to_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = Reader { bytes, at: 0 };
    r.header(CHECKPOINT_MAGIC)?;
    let n_dims = r.u32()? as usize;
    if n_dims < 2 {
        return Err(Error::Format(format!("checkpoint declares {n_dims} layer dims")));
    }
    let dims = (0..n_dims).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) {
        return Err(Error::Format(format!("checkpoint has a zero layer dim: {dims:?}")));
    }
    let count: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let flat = r.f64s(count)?;
    r.finish()?;
    MlpParams::from_flat(&dims, &flat)
}

pub fn save_params(path: impl AsRef<Path>, params: &MlpParams) -> Result<()> {
    Ok(fs::write(path, encode_params(params))?)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<MlpParams> {
    decode_params(&fs::read(path)?)
}

pub fn encode_batch(batch: &LabeledBatch) -> Vec<u8> {
    let (n, d) = (batch.len(), batch.dim());
    let mut out = Vec::with_capacity(28 + 8 * n * d + 4 * n);
    out.extend_from_slice(ADVERSARIAL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for v in batch.inputs().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &y in batch.labels() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

pub fn decode_batch(bytes: &[u8]) -> Result<LabeledBatch> {
    let mut r = Reader { bytes, at: 0 };
    r.header(ADVERSARIAL_MAGIC)?;
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    let cells = n.checked_mul(d).ok_or_else(|| Error::Format("batch size overflow".into()))?;
    let inputs = r.f64s(cells)?;
    let labels = (0..n).map(|_| r.u32().map(|y| y as usize)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    LabeledBatch::new(Tensor::new(vec![n, d], inputs)?, labels)
        .map_err(|e| Error::Format(format!("adversarial batch is invalid: {e}")))
}

pub fn save_batch(path: impl AsRef<Path>, batch: &LabeledBatch) -> Result<()> {
    Ok(fs::write(path, encode_batch(batch))?)
}

pub fn load_batch(path: impl AsRef<Path>) -> Result<LabeledBatch> {
    decode_batch(&fs::read(path)?)
}
