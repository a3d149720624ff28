//! Checkpoint files.
//!
//! Layout: `ULCK`, a little-endian `u32` header length, a JSON header
//! (format version, layer sizes, activation tags, step count, parameter
//! count), then the flat parameter array as little-endian `f32`.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, MlpModel};
use crate::error::{Error, Result};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ULCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub step_count: u64,
    pub num_params: usize,
}

pub fn write_checkpoint<T: Scalar>(model: &MlpModel<T>, step_count: u64, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        layer_sizes: model.layer_sizes().to_vec(),
        activations: model.activations().to_vec(),
        step_count,
        num_params: model.num_params(),
    };
    let text = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + text.len() + 4 * model.num_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(&text);
    for p in model.params() {
        let v = p.to_f32().unwrap_or(f32::NAN);
        buf.extend_from_slice(&v.to_le_bytes());
    }
    crate::fsutil::atomic_write(path, &buf)
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<(MlpModel<T>, CheckpointHeader)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |m: &str| Error::format(Some(path), m.to_string());
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad checkpoint magic"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..8 + hlen).ok_or_else(|| fail("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| fail(&format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(fail(&format!(
            "checkpoint format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let data = &bytes[8 + hlen..];
    if data.len() != 4 * header.num_params {
        return Err(fail("parameter block length does not match header"));
    }
    let params = data
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let model = MlpModel::from_params(&header.layer_sizes, &header.activations, params)?;
    Ok((model, header))
}
