//! Checkpoint format: JSON header + binary weight blob in one file.
//!
//! Layout: magic `STVSCKP1`, u32 header length, JSON header (version,
//! architecture, provenance, metric summary), then per tensor in canonical
//! order a u32 rank, u32 dims, and little-endian f32 data. Weights are
//! snapped to f32 at the end of training, so save → load reproduces
//! eval-mode outputs bit-exactly.

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::model::{ArchDescriptor, CnnClassifier, Mode};
use super::NnError;
use crate::io::atomic_write;

const MAGIC: &[u8; 8] = b"STVSCKP1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub arch: ArchDescriptor,
    /// Content hash of the dataset the model was trained on, if any.
    #[serde(default)]
    pub dataset_hash: Option<String>,
    /// Free-form metric summary (e.g. final validation accuracy).
    #[serde(default)]
    pub metrics: serde_json::Value,
    /// Training configuration echo for provenance.
    #[serde(default)]
    pub train_config: serde_json::Value,
}

pub fn save(
    model: &CnnClassifier,
    path: &Path,
    dataset_hash: Option<String>,
    metrics: serde_json::Value,
    train_config: serde_json::Value,
) -> Result<(), NnError> {
    let header = CheckpointHeader {
        version: 1,
        arch: model.arch.clone(),
        dataset_hash,
        metrics,
        train_config,
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    let mut m = model.clone();
    for t in m.tensors_mut() {
        let dims = t.dims();
        bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            bytes.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for &v in t.as_slice() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    atomic_write(path, &bytes).map_err(|e| NnError::Checkpoint(e.to_string()))
}

pub fn load(path: &Path) -> Result<(CnnClassifier, CheckpointHeader), NnError> {
    let bytes = std::fs::read(path).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let fail = |m: &str| NnError::Checkpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(fail("not a checkpoint file"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return Err(fail("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[12..12 + hlen])
        .map_err(|e| fail(&format!("bad header: {e}")))?;
    if header.version != 1 {
        return Err(fail("unsupported checkpoint version"));
    }
    let mut model = CnnClassifier::new_seeded(header.arch.clone(), 0);
    let mut off = 12 + hlen;
    let read_u32 = |off: &mut usize| -> Result<u32, NnError> {
        if *off + 4 > bytes.len() {
            return Err(fail("truncated blob"));
        }
        let v = u32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap());
        *off += 4;
        Ok(v)
    };
    for mut t in model.tensors_mut() {
        let rank = read_u32(&mut off)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut off)? as usize);
        }
        let expect = t.dims();
        if dims != expect {
            return Err(fail(&format!("tensor dims {dims:?} do not match architecture {expect:?}")));
        }
        let n = t.len();
        if off + 4 * n > bytes.len() {
            return Err(fail("truncated tensor data"));
        }
        let dst = t.as_mut_slice();
        for (k, item) in dst.iter_mut().enumerate().take(n) {
            *item = f32::from_le_bytes(bytes[off + 4 * k..off + 4 * k + 4].try_into().unwrap()) as f64;
        }
        off += 4 * n;
    }
    model.mode = Mode::Eval;
    Ok((model, header))
}
