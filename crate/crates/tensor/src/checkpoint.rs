//! Checkpoint layout: `u64` little-endian header length, a UTF-8 JSON
//! header, then every parameter's values as little-endian floats in header
//! order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub precision: String,
    pub params: Vec<ParamEntry>,
    /// Free-form metadata, typically the model configuration.
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<T: Real>(params: &ParamStore<T>, meta: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        precision: T::PRECISION.to_string(),
        params: params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: [t.rows(), t.cols()],
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + json.len() + params.num_values() * T::BYTES);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(path: &Path, params: &ParamStore<T>, meta: serde_json::Value) -> Result<()> {
    let bytes = write_checkpoint(params, meta)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn read_values<T: Real>(body: &[u8], header: &CheckpointHeader) -> Result<ParamStore<f64>> {
    let expected: usize = header.params.iter().map(|p| p.shape[0] * p.shape[1]).sum::<usize>() * T::BYTES;
    if body.len() != expected {
        return Err(TensorError::Checkpoint(format!(
            "payload has {} bytes, header describes {expected}",
            body.len()
        )));
    }
    let mut store = ParamStore::new();
    let mut chunks = body.chunks_exact(T::BYTES);
    for entry in &header.params {
        let [r, c] = entry.shape;
        let data: Vec<f64> = chunks.by_ref().take(r * c).map(|b| T::read_le(b).to_f64()).collect();
        store.add(entry.name.clone(), Tensor::from_vec(r, c, data)?);
    }
    Ok(store)
}

/// Parses checkpoint bytes; values are widened to `f64`.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ParamStore<f64>, CheckpointHeader)> {
    if bytes.len() < 8 {
        return Err(TensorError::Checkpoint("truncated header".into()));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body_start = 8usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| TensorError::Checkpoint("header length exceeds file".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[8..body_start]).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    let body = &bytes[body_start..];
    let store = match header.precision.as_str() {
        "f64" => read_values::<f64>(body, &header)?,
        "f32" => read_values::<f32>(body, &header)?,
        other => return Err(TensorError::Checkpoint(format!("unknown precision {other}"))),
    };
    Ok((store, header))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore<f64>, CheckpointHeader)> {
    read_checkpoint(&fs::read(path)?)
}
