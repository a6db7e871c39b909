//! Binary dataset payload, sibling format of the model artifact container.

use super::{AttributeColumn, DataError, Dataset, Provenance};
use crate::nn::Matrix;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"IADATA\0\0";
const MAX_SAMPLES: u64 = 1 << 24;
const MAX_FEATURES: u64 = 1 << 16;
const MAX_ATTRS: u32 = 256;
const MAX_NAME_LEN: u32 = 4096;
const MAX_META_LEN: u32 = 1 << 20;

#[derive(Serialize, Deserialize)]
struct Meta {
    source: String,
    lineage: Vec<String>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        if self.buf.len() - self.pos < n {
            return Err(DataError::Container(format!("truncated while reading {what}")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8, DataError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn encode_dataset(dataset: &Dataset) -> Vec<u8> {
    let meta = serde_json::to_string(&Meta {
        source: dataset.provenance.source.clone(),
        lineage: dataset.provenance.lineage.clone(),
    })
    .expect("meta serialization cannot fail");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&DATASET_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dataset.n_features() as u64).to_le_bytes());
    out.extend_from_slice(&(dataset.n_classes as u32).to_le_bytes());
    for &v in dataset.inputs.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &dataset.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    out.extend_from_slice(&(dataset.attributes.len() as u32).to_le_bytes());
    for attr in &dataset.attributes {
        out.extend_from_slice(&(attr.name.len() as u32).to_le_bytes());
        out.extend_from_slice(attr.name.as_bytes());
        out.extend_from_slice(&(attr.num_classes as u32).to_le_bytes());
        for &l in &attr.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
    }
    out.push(1);
    for &i in &dataset.provenance.original_indices {
        out.extend_from_slice(&(i as u64).to_le_bytes());
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, DataError> {
    let mut cur = Cursor::new(bytes);
    if cur.take(8, "magic")? != MAGIC {
        return Err(DataError::Container("bad magic; not a dataset container".into()));
    }
    let version = cur.u32("version")?;
    if version != DATASET_FORMAT_VERSION {
        return Err(DataError::Container(format!("unsupported version {version}")));
    }
    let meta_len = cur.u32("meta length")?;
    if meta_len > MAX_META_LEN {
        return Err(DataError::Container("meta too large".into()));
    }
    let meta_bytes = cur.take(meta_len as usize, "meta")?;
    let meta: Meta = serde_json::from_slice(meta_bytes)
        .map_err(|e| DataError::Container(format!("bad meta json: {e}")))?;

    let n = cur.u64("sample count")?;
    let d = cur.u64("feature count")?;
    if n > MAX_SAMPLES || d == 0 || d > MAX_FEATURES {
        return Err(DataError::Container(format!("dimensions {n}x{d} out of range")));
    }
    let n_classes = cur.u32("class count")? as usize;
    if n_classes < 2 {
        return Err(DataError::Container(format!("class count {n_classes} < 2")));
    }
    let (n, d) = (n as usize, d as usize);
    let raw = cur.take(n * d * 8, "inputs")?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(DataError::Container("non-finite input values".into()));
    }
    let inputs = Matrix::from_vec(n, d, data);

    let raw = cur.take(n * 4, "labels")?;
    let labels: Vec<usize> = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(DataError::Container(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }

    let n_attrs = cur.u32("attribute count")?;
    if n_attrs > MAX_ATTRS {
        return Err(DataError::Container("too many attributes".into()));
    }
    let mut attributes = Vec::with_capacity(n_attrs as usize);
    for _ in 0..n_attrs {
        let name_len = cur.u32("attribute name length")?;
        if name_len > MAX_NAME_LEN {
            return Err(DataError::Container("attribute name too long".into()));
        }
        let name = std::str::from_utf8(cur.take(name_len as usize, "attribute name")?)
            .map_err(|_| DataError::Container("attribute name is not UTF-8".into()))?
            .to_string();
        let num_classes = cur.u32("attribute class count")? as usize;
        if num_classes < 2 {
            return Err(DataError::Container(format!(
                "attribute {name} class count {num_classes} < 2"
            )));
        }
        let raw = cur.take(n * 4, "attribute labels")?;
        let labels: Vec<usize> = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(DataError::Container(format!(
                "attribute {name} label out of range"
            )));
        }
        attributes.push(AttributeColumn {
            name,
            num_classes,
            labels,
        });
    }

    let has_indices = cur.u8("index flag")?;
    let original_indices = if has_indices == 1 {
        let raw = cur.take(n * 8, "original indices")?;
        raw.chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect()
    } else {
        (0..n).collect()
    };

    Ok(Dataset {
        inputs,
        labels,
        n_classes,
        attributes,
        provenance: Provenance {
            source: meta.source,
            lineage: meta.lineage,
            original_indices,
        },
    })
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode_dataset(dataset))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path)?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, tests::small_spec};

    #[test]
    fn round_trip_preserves_dataset() {
        let ds = generate_synthetic_dataset(&small_spec()).unwrap();
        let bytes = encode_dataset(&ds);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let ds = generate_synthetic_dataset(&small_spec()).unwrap();
        let mut bytes = encode_dataset(&ds);
        // Labels sit right after inputs; flip the first one out of range.
        let meta_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let labels_off = 16 + meta_len + 8 + 8 + 4 + ds.len() * ds.n_features() * 8;
        bytes[labels_off..labels_off + 4].copy_from_slice(&999u32.to_le_bytes());
        assert!(decode_dataset(&bytes).is_err());
    }

    #[test]
    fn rejects_truncation() {
        let ds = generate_synthetic_dataset(&small_spec()).unwrap();
        let bytes = encode_dataset(&ds);
        assert!(decode_dataset(&bytes[..bytes.len() / 2]).is_err());
        assert!(decode_dataset(&bytes[..6]).is_err());
    }
}
