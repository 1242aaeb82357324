//! Checkpoint container: magic `POROGEN1`, a JSON manifest with tensor names,
//! shapes and byte offsets, then the raw little-endian f64 blobs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tensor::Tensor;

const MAGIC: &[u8; 8] = b"POROGEN1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected POROGEN1")]
    BadMagic,
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Serializes named tensors plus an arbitrary JSON metadata blob. Byte-exact
/// for identical inputs.
pub fn write_checkpoint(
    path: &Path,
    meta: &serde_json::Value,
    tensors: &[(String, &Tensor)],
) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += (t.numel() * 8) as u64;
    }
    let manifest = serde_json::to_vec(&Manifest { meta: meta.clone(), tensors: entries })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

pub fn read_checkpoint(
    path: &Path,
) -> Result<(serde_json::Value, Vec<(String, Tensor)>), CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(if bytes.len() >= 8 && &bytes[..8] != MAGIC {
            CheckpointError::BadMagic
        } else {
            CheckpointError::Truncated("header".into())
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16 + manifest_len;
    if bytes.len() < payload_start {
        return Err(CheckpointError::Truncated("manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..payload_start])?;
    let payload = &bytes[payload_start..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 8;
        if payload.len() < end {
            return Err(CheckpointError::Truncated(format!("tensor {}", entry.name)));
        }
        let data = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name, Tensor::new(&entry.shape, data)));
    }
    Ok((manifest.meta, tensors))
}
