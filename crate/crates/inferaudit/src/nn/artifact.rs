//! Self-describing model artifact container.
//!
//! Fixed little-endian layout:
//!
//! ```text
//! magic         8 bytes  "IAMODEL\0"
//! version       u32
//! seed          u64
//! n_layers      u32
//! layer_sizes   n_layers x u64
//! meta_len      u32, then meta bytes (UTF-8 JSON, possibly empty)
//! per weight layer: rows u64, cols u64, rows*cols f64, bias_len u64, bias f64s
//! ```
//!
//! The decoder treats its input as untrusted: every length is validated
//! against the remaining bytes before anything is allocated, shapes must
//! agree with the declared layer sizes, and non-finite parameters are
//! rejected.

use super::{Matrix, Model};
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"IAMODEL\0";
const MAX_LAYERS: u32 = 64;
const MAX_LAYER_SIZE: u64 = 1 << 20;
const MAX_META_LEN: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a model artifact")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated artifact while reading {0}")]
    Truncated(&'static str),
    #[error("invalid artifact field: {0}")]
    Invalid(String),
    #[error("artifact contains non-finite parameters")]
    NonFinite,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ArtifactError> {
        if self.buf.len() - self.pos < n {
            return Err(ArtifactError::Truncated(what));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ArtifactError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, ArtifactError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, ArtifactError> {
        let bytes = self.take(n.checked_mul(8).ok_or(ArtifactError::Truncated(what))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn encode_model(model: &Model, meta: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&(model.layer_sizes().len() as u32).to_le_bytes());
    for &s in model.layer_sizes() {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    for (w, b) in model.weights().iter().zip(model.biases()) {
        out.extend_from_slice(&(w.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(w.cols() as u64).to_le_bytes());
        for &v in w.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        for &v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes an artifact, returning the model and its metadata string.
pub fn decode_model(bytes: &[u8]) -> Result<(Model, String), ArtifactError> {
    let mut cur = Cursor::new(bytes);
    if cur.take(8, "magic")? != MAGIC {
        return Err(ArtifactError::BadMagic);
    }
    let version = cur.u32("version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(ArtifactError::UnsupportedVersion(version));
    }
    let seed = cur.u64("seed")?;
    let n_layers = cur.u32("layer count")?;
    if !(2..=MAX_LAYERS).contains(&n_layers) {
        return Err(ArtifactError::Invalid(format!(
            "layer count {n_layers} outside 2..={MAX_LAYERS}"
        )));
    }
    let mut layer_sizes = Vec::with_capacity(n_layers as usize);
    for _ in 0..n_layers {
        let s = cur.u64("layer size")?;
        if s == 0 || s > MAX_LAYER_SIZE {
            return Err(ArtifactError::Invalid(format!("layer size {s} out of range")));
        }
        layer_sizes.push(s as usize);
    }
    let meta_len = cur.u32("meta length")?;
    if meta_len > MAX_META_LEN {
        return Err(ArtifactError::Invalid(format!("meta length {meta_len} too large")));
    }
    let meta_bytes = cur.take(meta_len as usize, "meta")?;
    let meta = std::str::from_utf8(meta_bytes)
        .map_err(|_| ArtifactError::Invalid("meta is not UTF-8".into()))?
        .to_string();

    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for l in 0..layer_sizes.len() - 1 {
        let rows = cur.u64("weight rows")? as usize;
        let cols = cur.u64("weight cols")? as usize;
        if rows != layer_sizes[l] || cols != layer_sizes[l + 1] {
            return Err(ArtifactError::Invalid(format!(
                "weight layer {l} declares {rows}x{cols}, layer sizes say {}x{}",
                layer_sizes[l],
                layer_sizes[l + 1]
            )));
        }
        let data = cur.f64_vec(rows * cols, "weight data")?;
        weights.push(Matrix::from_vec(rows, cols, data));
        let bias_len = cur.u64("bias length")? as usize;
        if bias_len != layer_sizes[l + 1] {
            return Err(ArtifactError::Invalid(format!(
                "bias layer {l} declares {bias_len}, expected {}",
                layer_sizes[l + 1]
            )));
        }
        biases.push(cur.f64_vec(bias_len, "bias data")?);
    }
    if !cur.done() {
        return Err(ArtifactError::Invalid("trailing bytes after parameters".into()));
    }
    let finite = weights.iter().all(|w| w.is_finite())
        && biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(ArtifactError::NonFinite);
    }
    Ok((Model::from_parts(layer_sizes, weights, biases, seed), meta))
}

pub fn write_model(path: &Path, model: &Model, meta: &str) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_model(model, meta))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<(Model, String), ArtifactError> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}
