use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{MeanShape, NeighborTable};
use crate::training::{LandmarkModel, ModelSpec};

use super::{Result, ToolError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    pub len: usize,
}

/// Checkpoint description. The blob holds every parameter as
/// little-endian `f32`, in manifest order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub dtype: String,
    pub blob: String,
    pub spec: ModelSpec,
    pub mean_shape: MeanShape,
    pub neighbors: Option<Vec<Vec<usize>>>,
    pub tensors: Vec<TensorEntry>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (JSON manifest) and its sibling `.bin` blob.
pub fn save_checkpoint(model: &LandmarkModel, path: &Path) -> Result<CheckpointManifest> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (p, name) in model.net.params().iter().zip(model.net.param_names()) {
        tensors.push(TensorEntry { name: name.clone(), shape: p.shape().to_vec(), offset: blob.len(), len: p.len() });
        for v in p.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = blob_path(path);
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        dtype: "f32le".into(),
        blob: bin.file_name().and_then(|n| n.to_str()).unwrap_or("model.bin").to_string(),
        spec: model.spec.clone(),
        mean_shape: model.mean.clone(),
        neighbors: model.table.as_ref().map(|t| t.rows().to_vec()),
        tensors,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&bin, &blob)?;
    std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<LandmarkModel> {
    let m: CheckpointManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let bad = |msg: String| Err(ToolError::Checkpoint(format!("{}: {msg}", path.display())));
    if m.version != CHECKPOINT_VERSION || m.dtype != "f32le" {
        return bad(format!("unsupported version {} / dtype {}", m.version, m.dtype));
    }
    let table = match m.neighbors {
        Some(rows) => Some(NeighborTable::from_rows(rows, m.spec.num_landmarks).map_err(crate::training::TrainError::from)?),
        None => None,
    };
    let mut model = LandmarkModel::from_state(&m.spec, m.mean_shape, table)?;
    let blob = std::fs::read(path.with_file_name(&m.blob))?;
    if m.tensors.len() != model.net.params().len() {
        return bad(format!("{} tensors stored, architecture has {}", m.tensors.len(), model.net.params().len()));
    }
    for (i, t) in m.tensors.iter().enumerate() {
        let p = &model.net.params()[i];
        if t.name != model.net.param_names()[i] || t.shape != p.shape() || t.len != p.len() {
            return bad(format!("tensor {i} ({}) does not match the architecture", t.name));
        }
        let bytes = blob.get(t.offset..t.offset + 4 * t.len).ok_or_else(|| ToolError::Checkpoint(format!("blob too short for {}", t.name)))?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        model.net.set_param(i, data).map_err(crate::training::TrainError::from)?;
    }
    Ok(model)
}
