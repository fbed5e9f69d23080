//! Checkpoint directory: `manifest.json` describing every block plus
//! `params.bin`, the little-endian f64 concatenation of those blocks in
//! manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Block, EncoderError, ModelParams, ModelShape, Result};
use crate::numkit::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "cl2cm-checkpoint/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Param,
    FirstMoment,
    SecondMoment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub kind: BlockKind,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub shape: ModelShape,
    pub seed: u64,
    pub step: u64,
    /// Effective training configuration, echoed verbatim.
    pub config: serde_json::Value,
    pub blocks: Vec<BlockEntry>,
    pub blob: String,
    pub blob_sha256: String,
}

fn resolve_dir(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParams,
    seed: u64,
    config: serde_json::Value,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let blob = params.to_le_bytes();
    let mut blocks = Vec::new();
    for kind in [BlockKind::Param, BlockKind::FirstMoment, BlockKind::SecondMoment] {
        for b in Block::ALL {
            let (rows, cols) = params.shape().block_dims(b);
            blocks.push(BlockEntry {
                name: b.name().to_string(),
                kind,
                rows,
                cols,
            });
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.to_string(),
        shape: *params.shape(),
        seed,
        step: params.step(),
        config,
        blocks,
        blob: BLOB_FILE.to_string(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
    };
    fs::write(dir.join(BLOB_FILE), &blob)?;
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

/// Loads a checkpoint from its directory or from its manifest path.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointManifest)> {
    let dir = resolve_dir(path);
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| EncoderError::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(EncoderError::Checkpoint(format!(
            "unsupported format {:?}",
            manifest.format
        )));
    }
    let blob = fs::read(dir.join(&manifest.blob))?;
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(EncoderError::Checkpoint("blob hash mismatch".into()));
    }

    let mut offset = 0usize;
    let mut params: [Vec<Option<Matrix>>; 3] = Default::default();
    for p in params.iter_mut() {
        p.resize(Block::ALL.len(), None);
    }
    for entry in &manifest.blocks {
        let block = Block::from_name(&entry.name)
            .ok_or_else(|| EncoderError::Checkpoint(format!("unknown block {}", entry.name)))?;
        let n = entry.rows * entry.cols;
        let end = offset + n * 8;
        let bytes = blob
            .get(offset..end)
            .ok_or_else(|| EncoderError::Checkpoint("blob shorter than manifest".into()))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset = end;
        let slot = match entry.kind {
            BlockKind::Param => 0,
            BlockKind::FirstMoment => 1,
            BlockKind::SecondMoment => 2,
        };
        params[slot][block.index()] = Some(Matrix::new(entry.rows, entry.cols, data)?);
    }
    if offset != blob.len() {
        return Err(EncoderError::Checkpoint("blob longer than manifest".into()));
    }
    let [values, first, second] = params;
    let values = values
        .into_iter()
        .zip(Block::ALL)
        .map(|(m, b)| m.ok_or_else(|| EncoderError::Checkpoint(format!("missing block {}", b.name()))))
        .collect::<Result<Vec<_>>>()?;
    let mut model = ModelParams::from_blocks(manifest.shape, values, manifest.step)?;
    for ((b, m), v) in Block::ALL.into_iter().zip(first).zip(second) {
        if let (Some(m), Some(v)) = (m, v) {
            model.set_moments(b, m, v);
        }
    }
    Ok((model, manifest))
}
