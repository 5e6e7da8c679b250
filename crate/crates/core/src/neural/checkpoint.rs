//! Checkpoint format: a little-endian u64 header length, a JSON header
//! describing the architecture and declaring the tensor list, then the
//! parameter blob as little-endian f64 in declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

use super::params::{ModelConfig, ModelLayout};
use super::{LocalSurfaceModel, ResidualStats};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: ModelConfig,
    align_to_grasp: RigidTransform,
    residual_stats: Option<ResidualStats>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn save_checkpoint(model: &LocalSurfaceModel, path: &Path) -> Result<()> {
    let layout = model.layout();
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: model.config,
        align_to_grasp: model.align_to_grasp,
        residual_stats: model.residual_stats,
        tensors: layout
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + header_bytes.len() + model.params.len() * 8);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in &model.params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<LocalSurfaceModel> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() < 8 {
        return Err(Error::Checkpoint("file shorter than the length prefix".into()));
    }
    let header_len = u64::from_le_bytes(data[..8].try_into().unwrap()) as usize;
    if data.len() < 8 + header_len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&data[8..8 + header_len])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header.config.validate()?;
    let layout = ModelLayout::new(&header.config);
    // The declared tensor list must match the layout this build derives
    // from the config; the blob order is the declared order.
    if layout.tensors.len() != header.tensors.len()
        || layout.tensors.iter().zip(&header.tensors).any(|(a, b)| {
            a.name != b.name || a.rows != b.rows || a.cols != b.cols
        })
    {
        return Err(Error::Checkpoint(
            "declared tensor list does not match the architecture".into(),
        ));
    }
    let blob = &data[8 + header_len..];
    if blob.len() != layout.total * 8 {
        return Err(Error::Checkpoint(format!(
            "parameter blob holds {} bytes, expected {}",
            blob.len(),
            layout.total * 8
        )));
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter value".into()));
    }
    Ok(LocalSurfaceModel {
        config: header.config,
        params,
        align_to_grasp: header.align_to_grasp,
        residual_stats: header.residual_stats,
    })
}
