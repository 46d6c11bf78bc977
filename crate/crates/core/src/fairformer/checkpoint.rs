//! Single-file checkpoints: one line of JSON manifest, a newline, then every
//! tensor as little-endian `f64` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "fairformer-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Position of the first value, counted in `f64`s from the buffer start.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    /// Buffer length in `f64`s.
    pub len: usize,
}

pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (i, t) in params.tensors().iter().enumerate() {
        tensors.push(TensorEntry {
            name: params.name(i).to_string(),
            shape: [t.rows(), t.cols()],
            offset,
        });
        offset += t.len();
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: params.config().clone(),
        tensors,
        len: offset,
    };
    let mut out = serde_json::to_vec(&manifest)?;
    out.push(b'\n');
    out.reserve(offset * 8);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing manifest terminator".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..nl])?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", manifest.format)));
    }
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {} is not supported (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    let buf = &bytes[nl + 1..];
    if buf.len() < manifest.len * 8 {
        return Err(Error::Checkpoint(format!(
            "truncated: buffer holds {} bytes, manifest needs {}",
            buf.len(),
            manifest.len * 8
        )));
    }
    if buf.len() > manifest.len * 8 {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after buffer",
            buf.len() - manifest.len * 8
        )));
    }
    let mut named = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let [r, c] = e.shape;
        let end = e.offset + r * c;
        if end > manifest.len {
            return Err(Error::Checkpoint(format!("`{}` extends past the buffer", e.name)));
        }
        let data = buf[e.offset * 8..end * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        named.push((e.name.clone(), Tensor::new(r, c, data)?));
    }
    ModelParams::from_named(&manifest.config, named)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

/// Loads parameters together with the config stored in the manifest.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, ModelConfig)> {
    let params = decode_checkpoint(&fs::read(path)?)?;
    let config = params.config().clone();
    Ok((params, config))
}
