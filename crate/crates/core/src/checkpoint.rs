//! On-disk model checkpoints.
//!
//! A checkpoint is a directory holding `meta.json` plus one `<name>.bin`
//! blob per parameter tensor. Each blob starts with a 16-byte header of four
//! little-endian `u32`s (rank, then up to three dimensions, unused ones
//! zero) followed by the row-major values as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use crate::numerics::{ParamStore, Tensor};

pub const META_FILE: &str = "meta.json";
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Encodes one tensor as a blob.
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>, CheckpointError> {
    let shape = t.shape();
    if shape.len() > 3 {
        return Err(CheckpointError::Corrupt(format!("rank {} exceeds 3", shape.len())));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for i in 0..3 {
        let d = shape.get(i).copied().unwrap_or(0);
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, CheckpointError> {
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Corrupt("blob shorter than header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let rank = word(0);
    if !(1..=3).contains(&rank) {
        return Err(CheckpointError::Corrupt(format!("bad rank {rank}")));
    }
    let shape: Vec<usize> = (1..=rank).map(word).collect();
    let n: usize = shape.iter().product();
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * n {
        return Err(CheckpointError::Corrupt(format!(
            "shape {shape:?} needs {} bytes, blob has {}",
            8 * n,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(shape, values).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

/// Writes `meta` and every tensor of `params` into `dir`, replacing it
/// atomically (write to a sibling temp directory, then rename).
pub fn write_checkpoint(dir: &Path, meta: &Value, params: &ParamStore) -> Result<(), CheckpointError> {
    let parent = dir.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir
        .file_name()
        .ok_or_else(|| CheckpointError::Corrupt("checkpoint path has no file name".into()))?
        .to_string_lossy();
    let tmp = parent.join(format!(".{name}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;

    let names: Vec<&str> = params.iter().map(|(_, n, _)| n).collect();
    let mut full = meta.clone();
    if let Value::Object(m) = &mut full {
        m.insert("tensors".into(), Value::from(names.clone()));
        let shapes: serde_json::Map<String, Value> = params
            .iter()
            .map(|(_, n, t)| (n.to_string(), Value::from(t.shape().to_vec())))
            .collect();
        m.insert("shapes".into(), Value::Object(shapes));
    }
    let mut f = fs::File::create(tmp.join(META_FILE))?;
    f.write_all(serde_json::to_string_pretty(&full)?.as_bytes())?;
    f.write_all(b"\n")?;
    for (_, n, t) in params.iter() {
        fs::write(tmp.join(format!("{n}.bin")), encode_tensor(t)?)?;
    }
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

/// Reads a checkpoint; tensors come back in the order they were written.
pub fn read_checkpoint(dir: &Path) -> Result<(Value, ParamStore), CheckpointError> {
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
    let names = meta
        .get("tensors")
        .and_then(Value::as_array)
        .ok_or_else(|| CheckpointError::Corrupt("meta.json lacks a tensor list".into()))?;
    let mut store = ParamStore::new();
    for n in names {
        let n = n
            .as_str()
            .ok_or_else(|| CheckpointError::Corrupt("tensor name is not a string".into()))?;
        let t = decode_tensor(&fs::read(dir.join(format!("{n}.bin")))?)?;
        store.add(n, t);
    }
    Ok((meta, store))
}

/// Copies `loaded` into `target`, requiring identical names and shapes in
/// identical order.
pub fn restore_params(target: &mut ParamStore, loaded: &ParamStore) -> Result<(), CheckpointError> {
    if target.len() != loaded.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} tensors stored, model has {}",
            loaded.len(),
            target.len()
        )));
    }
    for (id, name, t) in loaded.iter() {
        if target.name(id) != name || target.get(id).shape() != t.shape() {
            return Err(CheckpointError::Corrupt(format!("tensor '{name}' does not match the model")));
        }
        *target.get_mut(id) = t.clone();
    }
    Ok(())
}
