//! Checkpoint container: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header and the raw little-endian `f64` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DcsageModel, ModelConfig, ModelError};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"DCSGCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub hidden_dim: usize,
    /// Hash of the training configuration that produced the weights.
    pub config_hash: String,
    pub member_index: Option<usize>,
    pub selected_epoch: Option<usize>,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: DcsageModel,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    metadata: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        let mut offset = 0;
        for (name, t) in self.model.named_params() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                len: t.len(),
            });
            offset += t.len();
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            version: FORMAT_VERSION,
            config: self.model.config,
            metadata: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(e.to_string()))?;
        if header.version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {}", header.version)));
        }
        let payload = &bytes[16 + hlen..];
        let mut named = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let start = e.offset * 8;
            let end = start + e.len * 8;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| corrupt(format!("payload too short for `{}`", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            named.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Self {
            model: DcsageModel::from_named(header.config, named)?,
            meta: header.metadata,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        write_atomic(path, &self.to_bytes()?).map_err(|e| corrupt(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

/// Write-temp-then-rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| std::io::Error::other("path has no file name"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
