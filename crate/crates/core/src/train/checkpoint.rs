//! Checkpoints: a JSON manifest plus one raw little-endian f32 blob.
//!
//! The manifest records the format version, the full training
//! configuration (seeds included) and every parameter's name, shape and
//! kind in order; the blob concatenates the parameter values in exactly
//! that order. Loading and re-saving is byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub train: TrainConfig,
    pub generator_params: Vec<ParamRecord>,
    pub critic_params: Vec<ParamRecord>,
}

fn records<T: Scalar>(set: &ParamSet<T>) -> Vec<ParamRecord> {
    set.iter()
        .map(|e| ParamRecord {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            kind: e.kind,
        })
        .collect()
}

fn push_blob<T: Scalar>(blob: &mut Vec<u8>, set: &ParamSet<T>) {
    for e in set.iter() {
        for &v in e.value.data() {
            blob.extend_from_slice(&(v.to_f64_lit() as f32).to_le_bytes());
        }
    }
}

/// Writes `<base>.json` and `<base>.bin`.
pub fn save_checkpoint<T: Scalar>(
    base: &Path,
    config: &TrainConfig,
    generator: &ParamSet<T>,
    critic: Option<&ParamSet<T>>,
) -> Result<()> {
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        train: config.clone(),
        generator_params: records(generator),
        critic_params: critic.map(records).unwrap_or_default(),
    };
    fs::write(
        base.with_extension("json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let mut blob = Vec::new();
    push_blob(&mut blob, generator);
    if let Some(c) = critic {
        push_blob(&mut blob, c);
    }
    fs::write(base.with_extension("bin"), blob)?;
    Ok(())
}

fn read_params<T: Scalar>(
    records: &[ParamRecord],
    blob: &[u8],
    offset: &mut usize,
    base: &Path,
) -> Result<ParamSet<T>> {
    let mut set = ParamSet::new();
    for r in records {
        let numel: usize = r.shape.iter().product();
        let bytes = numel * 4;
        if *offset + bytes > blob.len() {
            return Err(Error::CorruptFile(format!(
                "{}: blob ends inside parameter {}",
                base.display(),
                r.name
            )));
        }
        let data: Vec<T> = blob[*offset..*offset + bytes]
            .chunks_exact(4)
            .map(|c| T::from_f64_lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        *offset += bytes;
        set.insert(r.name.clone(), Tensor::from_vec(&r.shape, data)?, r.kind);
    }
    Ok(set)
}

/// Loads `<base>.json` + `<base>.bin`. Values are stored as f32 and get
/// widened to `T`.
pub fn load_checkpoint<T: Scalar>(
    base: &Path,
) -> Result<(CheckpointManifest, ParamSet<T>, Option<ParamSet<T>>)> {
    let base: PathBuf = base.with_extension("");
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::CorruptFile(format!(
            "unsupported checkpoint format version {}",
            manifest.format_version
        )));
    }
    let blob = fs::read(base.with_extension("bin"))?;
    let mut offset = 0;
    let generator = read_params(&manifest.generator_params, &blob, &mut offset, &base)?;
    let critic = if manifest.critic_params.is_empty() {
        None
    } else {
        Some(read_params(&manifest.critic_params, &blob, &mut offset, &base)?)
    };
    if offset != blob.len() {
        return Err(Error::CorruptFile(format!(
            "{}: {} trailing bytes after the last parameter",
            base.display(),
            blob.len() - offset
        )));
    }
    Ok((manifest, generator, critic))
}
