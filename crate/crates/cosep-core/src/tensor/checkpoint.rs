//! Versioned JSON checkpoints.
//!
//! A checkpoint bundles the trainable parameters, non-trainable state
//! (batch-norm running statistics), and the model configuration that
//! built them, so a file is self-describing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Model/architecture configuration, stored as raw JSON so this
    /// module does not depend on any particular config type.
    pub config: serde_json::Value,
    pub params: BTreeMap<String, Tensor>,
    /// Non-trainable tensors, e.g. batch-norm running mean/var.
    pub state: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config,
            params: BTreeMap::new(),
            state: BTreeMap::new(),
        }
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), TensorError> {
    let json = serde_json::to_string(ck)
        .map_err(|e| TensorError::Checkpoint(format!("serialize: {e}")))?;
    fs::write(path, json)
        .map_err(|e| TensorError::Checkpoint(format!("write {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TensorError> {
    let json = fs::read_to_string(path)
        .map_err(|e| TensorError::Checkpoint(format!("read {}: {e}", path.display())))?;
    let ck: Checkpoint = serde_json::from_str(&json)
        .map_err(|e| TensorError::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if ck.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported format version {} (expected {})",
            ck.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    Ok(ck)
}
