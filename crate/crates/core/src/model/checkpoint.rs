//! Checkpoint layout: magic `MREv1`, a little-endian `u32` byte length, the
//! model config as UTF-8 JSON, then every parameter as a little-endian `f32`
//! in declaration order.

use std::fs;
use std::path::Path;

use super::{EmbeddingModel, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MREv1";

pub fn encode(model: &EmbeddingModel) -> Result<Vec<u8>> {
    let config = serde_json::to_string(model.config())
        .map_err(|e| Error::Format(format!("config serialization: {e}")))?;
    let mut out = Vec::with_capacity(9 + config.len() + 4 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    for p in model.params() {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingModel> {
    let rest = bytes
        .strip_prefix(CHECKPOINT_MAGIC.as_slice())
        .ok_or_else(|| Error::Format("missing MREv1 magic".into()))?;
    if rest.len() < 4 {
        return Err(Error::Format("truncated checkpoint header".into()));
    }
    let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < len {
        return Err(Error::Format("truncated checkpoint config".into()));
    }
    let text = std::str::from_utf8(&rest[..len])
        .map_err(|e| Error::Format(format!("config is not UTF-8: {e}")))?;
    let config: ModelConfig =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad config: {e}")))?;
    let body = &rest[len..];
    if body.len() % 4 != 0 {
        return Err(Error::Format(
            "parameter block is not a whole number of f32".into(),
        ));
    }
    let params = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingModel::from_parts(config, params).map_err(|e| match e {
        Error::Shape { expected, actual } => Error::Format(format!(
            "checkpoint holds {actual} parameters, config needs {expected}"
        )),
        other => other,
    })
}

pub fn write_checkpoint(model: &EmbeddingModel, path: &Path) -> Result<()> {
    fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<EmbeddingModel> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
