//! Checkpoint files: magic bytes, a length-prefixed JSON header, then the
//! little-endian f32 parameter blob.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mlp::{Mlp, MlpArch, MlpDenoiser};
use crate::condition::ConditionVocabulary;
use crate::schedule::NoiseSchedule;

pub const MAGIC: &[u8; 8] = b"SELFEVCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("invalid checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("parameter blob holds {got} values, header declares {expected}")]
    ParamCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CheckpointHeader {
    pub version: u32,
    pub arch: MlpArch,
    pub schedule: NoiseSchedule,
    pub condition_vocabulary: ConditionVocabulary,
    pub config_hash: String,
    pub epochs_trained: usize,
    pub param_count: usize,
}

pub fn to_bytes(model: &MlpDenoiser, config_hash: &str, epochs_trained: usize) -> Vec<u8> {
    let params = model.network().flatten();
    let header = CheckpointHeader {
        version: VERSION,
        arch: model.arch.clone(),
        schedule: model.schedule.clone(),
        condition_vocabulary: model.vocab.clone(),
        config_hash: config_hash.to_string(),
        epochs_trained,
        param_count: params.len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(MlpDenoiser, CheckpointHeader), CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let len_bytes: [u8; 4] = rest.get(..4).ok_or(CheckpointError::Truncated)?.try_into().unwrap();
    let hlen = u32::from_le_bytes(len_bytes) as usize;
    let json = rest.get(4..4 + hlen).ok_or(CheckpointError::Truncated)?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    if header.version != VERSION {
        return Err(CheckpointError::Version(header.version));
    }
    let blob = &rest[4 + hlen..];
    if !blob.len().is_multiple_of(4) {
        return Err(CheckpointError::Truncated);
    }
    let params: Vec<f32> =
        blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if params.len() != header.param_count {
        return Err(CheckpointError::ParamCount { expected: header.param_count, got: params.len() });
    }
    let sizes = header.arch.sizes();
    let net = Mlp::from_flat(&sizes, &params).ok_or(CheckpointError::ParamCount {
        expected: sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum(),
        got: params.len(),
    })?;
    let model = MlpDenoiser::new(
        header.arch.clone(),
        header.condition_vocabulary.clone(),
        header.schedule.clone(),
        net,
    );
    Ok((model, header))
}

pub fn save(path: &Path, model: &MlpDenoiser, config_hash: &str, epochs_trained: usize) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(model, config_hash, epochs_trained))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(MlpDenoiser, CheckpointHeader), CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}
