//! Dataset files.
//!
//! ```text
//! "ULAD" | version: u32 | header_len: u32 | header (JSON text)
//! n: u64 | D: u64 | features: f32[n·D] | y: u16[n] | z: u16[n]
//! ```
//! All integers and floats are little-endian. The trailing `z` block is the
//! evaluation-only section; the header names it in `eval_only_sections`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, ImageShape, Provenance, Split};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"ULAD";
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    k: usize,
    l: usize,
    split: Split,
    shape: ImageShape,
    provenance: Provenance,
    eval_only_sections: Vec<String>,
}

pub fn encode_dataset(d: &Dataset) -> Result<Vec<u8>> {
    let header = Header {
        k: d.k,
        l: d.l,
        split: d.split,
        shape: d.shape,
        provenance: d.provenance.clone(),
        eval_only_sections: vec!["z".into()],
    };
    let text = serde_json::to_vec(&header)?;
    let (n, dim) = d.features.dim();
    let mut buf = Vec::with_capacity(32 + text.len() + 4 * n * dim + 4 * n);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(&text);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(dim as u64).to_le_bytes());
    for v in d.features.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for y in &d.labels {
        buf.extend_from_slice(&y.to_le_bytes());
    }
    for z in &d.bias {
        buf.extend_from_slice(&z.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_dataset(bytes: &[u8], path: Option<&Path>) -> Result<Dataset> {
    let fail = |m: String| Error::format(path, m);
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4).ok_or_else(|| fail("file too short".into()))?;
    if magic != DATASET_MAGIC {
        return Err(fail("bad magic bytes (not a dataset file)".into()));
    }
    let version = cur.u32().ok_or_else(|| fail("truncated version".into()))?;
    if version != DATASET_FORMAT_VERSION {
        return Err(fail(format!(
            "dataset format version {version} (expected {DATASET_FORMAT_VERSION})"
        )));
    }
    let hlen = cur.u32().ok_or_else(|| fail("truncated header length".into()))? as usize;
    let htext = cur.take(hlen).ok_or_else(|| fail("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(htext).map_err(|e| fail(format!("header: {e}")))?;
    let n = cur.u64().ok_or_else(|| fail("truncated sample count".into()))? as usize;
    let dim = cur.u64().ok_or_else(|| fail("truncated feature width".into()))? as usize;
    let need = n
        .checked_mul(dim)
        .and_then(|nd| nd.checked_mul(4))
        .and_then(|f| f.checked_add(4 * n))
        .ok_or_else(|| fail("size overflow".into()))?;
    if cur.remaining() != need {
        return Err(fail(format!(
            "payload is {} bytes, expected {need}",
            cur.remaining()
        )));
    }
    let fbytes = cur.take(4 * n * dim).unwrap();
    let feats: Vec<f32> = fbytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let read_u16 = |b: &[u8]| -> Vec<u16> {
        b.chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let labels = read_u16(cur.take(2 * n).unwrap());
    let bias = read_u16(cur.take(2 * n).unwrap());
    let features = Array2::from_shape_vec((n, dim), feats).expect("sized from header");
    Dataset::from_parts(
        header.k,
        header.l,
        header.split,
        header.shape,
        header.provenance,
        features,
        labels,
        bias,
    )
    .map_err(|e| fail(e.to_string()))
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    crate::fsutil::atomic_write(path, &encode_dataset(d)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    decode_dataset(&bytes, Some(path))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
