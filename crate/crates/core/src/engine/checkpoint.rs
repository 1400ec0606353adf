//! Checkpoints: a JSON manifest plus a flat blob of little-endian `f32`.
//!
//! The manifest lists every tensor's name, kind, shape and offset (in floats)
//! into the blob, in blob order. It also records the search space and its
//! hash, the seed and step count, and, for supernets, the update counters.
//! Nothing time-dependent is stored, so equal training runs produce
//! byte-identical checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::FairnessCounters;
use crate::io::write_atomic;
use crate::search_space::{Architecture, SearchSpace, SpaceConfig};

use super::params::{ParamSet, Tensor, TensorKind};

pub const CHECKPOINT_FORMAT: &str = "strictfair-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub seed: u64,
    pub step: u64,
    pub space_hash: String,
    pub space: SpaceConfig,
    /// Set when the parameters cover a single path only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Architecture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counters: Option<FairnessCounters>,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

/// What a checkpoint describes besides the tensors.
#[derive(Clone, Debug)]
pub struct CheckpointMeta<'a> {
    pub space: &'a SearchSpace,
    pub seed: u64,
    pub step: u64,
    pub path: Option<&'a Architecture>,
    pub counters: Option<&'a FairnessCounters>,
}

/// `<base>.json` and `<base>.bin`.
pub fn checkpoint_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("bin"))
}

pub fn encode(params: &ParamSet, meta: &CheckpointMeta<'_>, blob_name: &str) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut blob = Vec::with_capacity(params.scalar_count() * 4);
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0;
    for t in params.tensors() {
        entries.push(TensorEntry {
            name: t.name.clone(),
            kind: t.kind,
            shape: t.shape.clone(),
            offset,
            len: t.data.len(),
        });
        offset += t.data.len();
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        seed: meta.seed,
        step: meta.step,
        space_hash: meta.space.content_hash(),
        space: SpaceConfig::from(meta.space),
        path: meta.path.cloned(),
        counters: meta.counters.cloned(),
        blob: blob_name.to_string(),
        tensors: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    Ok((json, blob))
}

/// Writes `<base>.json` and `<base>.bin`, each staged and renamed.
pub fn save(base: &Path, params: &ParamSet, meta: &CheckpointMeta<'_>) -> Result<()> {
    let (json_path, bin_path) = checkpoint_paths(base);
    let blob_name = bin_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", base.display())))?
        .to_string();
    let (json, blob) = encode(params, meta, &blob_name)?;
    write_atomic(&bin_path, &blob)?;
    write_atomic(&json_path, &json)?;
    Ok(())
}

pub fn decode(manifest: &CheckpointManifest, blob: &[u8]) -> Result<(SearchSpace, ParamSet)> {
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", manifest.format)));
    }
    let space = SearchSpace::try_from(&manifest.space)?;
    if space.content_hash() != manifest.space_hash {
        return Err(Error::Checkpoint("space hash does not match the stored space".into()));
    }
    if !blob.len().is_multiple_of(4) {
        return Err(Error::Checkpoint("blob length is not a multiple of 4".into()));
    }
    let floats: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let tensors = manifest
        .tensors
        .iter()
        .map(|e| {
            let data = floats
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` overruns the blob", e.name)))?
                .to_vec();
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Checkpoint(format!("tensor `{}` shape/len disagree", e.name)));
            }
            Ok(Tensor {
                name: e.name.clone(),
                kind: e.kind,
                shape: e.shape.clone(),
                data,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = ParamSet::from_tensors(&space, manifest.path.as_ref(), tensors)?;
    Ok((space, params))
}

/// Reads `<base>.json` and the blob it names (resolved next to the manifest).
pub fn load(base: &Path) -> Result<(CheckpointManifest, SearchSpace, ParamSet)> {
    let (json_path, _) = checkpoint_paths(base);
    let manifest: CheckpointManifest = serde_json::from_slice(&std::fs::read(&json_path)?)?;
    let blob_path = json_path.with_file_name(&manifest.blob);
    let blob = std::fs::read(&blob_path)?;
    let (space, params) = decode(&manifest, &blob)?;
    Ok((manifest, space, params))
}
