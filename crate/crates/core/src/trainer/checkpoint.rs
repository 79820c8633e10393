//! Binary checkpoint files: magic, version, length-prefixed JSON manifest,
//! then the parameter tensors as little-endian `f64` arrays in manifest
//! order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Hyperparameters;
use super::model::{build_variant, Model, VariantId};
use super::train::EpochRecord;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KTSTDRL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    variant: VariantId,
    hyperparameters: Hyperparameters,
    skill_count: usize,
    skills: Vec<String>,
    best_epoch: usize,
    history: Vec<EpochRecord>,
    parameters: Vec<ParamEntry>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    /// Raw skill ids in index order.
    pub skills: Vec<String>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl<T: Scalar> Checkpoint<T> {
    /// Errors unless the checkpoint was trained for `m` skills.
    pub fn expect_skill_count(&self, m: usize) -> Result<()> {
        let have = self.model.skill_count();
        if have != m {
            return Err(Error::Dimension {
                op: "checkpoint",
                detail: format!("model built for M={have}, dataset has M={m}"),
            });
        }
        Ok(())
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint<T: Scalar>(
    model: &Model<T>,
    skills: &[String],
    history: &[EpochRecord],
    best_epoch: usize,
) -> Result<Vec<u8>> {
    if skills.len() != model.skill_count() {
        return Err(Error::Checkpoint(format!(
            "{} skill ids for a model with M={}",
            skills.len(),
            model.skill_count()
        )));
    }
    let params = model.params();
    if let Some(p) = params.iter().find(|p| !p.value.is_finite()) {
        return Err(Error::Checkpoint(format!(
            "parameter `{}` is not finite",
            p.name
        )));
    }
    let manifest = Manifest {
        variant: model.variant(),
        hyperparameters: model.hyperparameters().clone(),
        skill_count: model.skill_count(),
        skills: skills.to_vec(),
        best_epoch,
        history: history.to_vec(),
        parameters: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * params.scalar_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params.iter() {
        for &v in p.value.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses bytes produced by [`encode_checkpoint`].
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let truncated = || Error::Checkpoint("truncated file".into());
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let version = u32::from_le_bytes(
        bytes
            .get(8..12)
            .ok_or_else(truncated)?
            .try_into()
            .expect("4 bytes"),
    );
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = u64::from_le_bytes(
        bytes
            .get(12..20)
            .ok_or_else(truncated)?
            .try_into()
            .expect("8 bytes"),
    );
    let len = usize::try_from(len).map_err(|_| truncated())?;
    let json_end = 20usize.checked_add(len).ok_or_else(truncated)?;
    let manifest: Manifest =
        serde_json::from_slice(bytes.get(20..json_end).ok_or_else(truncated)?)?;
    if manifest.skills.len() != manifest.skill_count {
        return Err(Error::Checkpoint("skill list does not match M".into()));
    }
    let mut model = build_variant::<T>(
        manifest.variant,
        &manifest.hyperparameters,
        manifest.skill_count,
    )?;
    let mut cursor = json_end;
    let mut values = Vec::with_capacity(manifest.parameters.len());
    for entry in manifest.parameters {
        let n: usize = entry.shape.iter().product();
        let end = cursor.checked_add(8 * n).ok_or_else(truncated)?;
        let raw = bytes.get(cursor..end).ok_or_else(truncated)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        values.push((entry.name, Tensor::from_vec(&entry.shape, data)?));
        cursor = end;
    }
    if cursor != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - cursor
        )));
    }
    model.load_values(values)?;
    Ok(Checkpoint {
        model,
        skills: manifest.skills,
        history: manifest.history,
        best_epoch: manifest.best_epoch,
    })
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &Model<T>,
    skills: &[String],
    history: &[EpochRecord],
    best_epoch: usize,
) -> Result<()> {
    fs::write(path, encode_checkpoint(model, skills, history, best_epoch)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode_checkpoint(&fs::read(path)?)
}
