//! Checkpoint files: one JSON header line followed by the tensors as
//! little-endian `f32` blobs in header order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "risurconv-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor>,
}

pub fn write_checkpoint(
    mut w: impl Write,
    store: &ParamStore,
    config: serde_json::Value,
    config_hash: &str,
) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config_hash: config_hash.into(),
        config,
        tensors: store
            .ids()
            .map(|id| TensorEntry {
                name: store.name(id).into(),
                shape: store.get(id).shape().to_vec(),
                trainable: store.is_trainable(id),
            })
            .collect(),
    };
    let line = serde_json::to_string(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    for id in store.ids() {
        let bytes: Vec<u8> = store.get(id).data().iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl BufRead) -> Result<Checkpoint> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| NnError::Checkpoint(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| NnError::Checkpoint(format!("truncated data for {}", entry.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint { header, tensors })
}

impl Checkpoint {
    /// Copies every tensor into `store`. Names, shapes and the set of
    /// entries must match exactly.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.header.tensors.len() != store.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.header.tensors.len(),
                store.len()
            )));
        }
        for (entry, tensor) in self.header.tensors.iter().zip(&self.tensors) {
            let id = store
                .find(&entry.name)
                .ok_or_else(|| NnError::Checkpoint(format!("unknown tensor {}", entry.name)))?;
            store
                .set(id, tensor.clone())
                .map_err(|e| NnError::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }
}
