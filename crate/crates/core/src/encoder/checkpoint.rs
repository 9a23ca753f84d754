use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::EncoderError;

pub const CHECKPOINT_FORMAT: &str = "subjlab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    /// What the payload holds, e.g. `ds-model` or `is-bundle`.
    pub kind: String,
    pub config_hash: String,
    /// Resolved configuration the payload was trained with.
    pub config: serde_json::Value,
}

#[derive(Serialize)]
struct Out<'a, T> {
    #[serde(flatten)]
    header: &'a CheckpointHeader,
    payload: &'a T,
}

#[derive(Deserialize)]
struct In<T> {
    #[serde(flatten)]
    header: CheckpointHeader,
    payload: T,
}

pub fn save_checkpoint<T: Serialize>(
    path: impl AsRef<Path>,
    kind: &str,
    config_hash: &str,
    config: serde_json::Value,
    payload: &T,
) -> Result<(), EncoderError> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        kind: kind.into(),
        config_hash: config_hash.into(),
        config,
    };
    let bytes =
        serde_json::to_vec(&Out { header: &header, payload }).map_err(|e| EncoderError::Checkpoint(e.to_string()))?;
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads a checkpoint, checking format, version and payload kind.
pub fn load_checkpoint<T: DeserializeOwned>(
    path: impl AsRef<Path>,
    kind: &str,
) -> Result<(CheckpointHeader, T), EncoderError> {
    let bytes = fs::read(path.as_ref())?;
    let file: In<T> = serde_json::from_slice(&bytes)
        .map_err(|e| EncoderError::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
    let h = &file.header;
    if h.format != CHECKPOINT_FORMAT || h.version != CHECKPOINT_VERSION {
        return Err(EncoderError::Checkpoint(format!("unsupported container {} v{}", h.format, h.version)));
    }
    if h.kind != kind {
        return Err(EncoderError::Checkpoint(format!("expected a {kind} checkpoint, found {}", h.kind)));
    }
    Ok((file.header, file.payload))
}
