//! Parameter checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  content
//! 0       8     magic "FQCKPT01"
//! 8       8     u64 manifest length L in bytes
//! 16      L     UTF-8 JSON manifest
//! 16+L    8·N   f64 IEEE-754 values, N = sum of parameter lengths
//! ```
//!
//! The manifest is `{"model": <model description>, "params": [{"name",
//! "shape", "group", "offset", "len"}]}`; `offset`/`len` count f64 elements
//! from the start of the data block, in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Group, ParameterSet};
use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FQCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: Group,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

pub fn encode(model: &serde_json::Value, set: &ParameterSet) -> Vec<u8> {
    let mut offset = 0;
    let params = set
        .iter()
        .map(|(_, p)| {
            let e = ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                group: p.group,
                offset,
                len: p.value.len(),
            };
            offset += p.value.len();
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        model: model.clone(),
        params,
    })
    .expect("manifest serialises");
    let mut out = Vec::with_capacity(16 + manifest.len() + 8 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, p) in set.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(serde_json::Value, ParameterSet)> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic".into()));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("manifest length exceeds file".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..data_start]).map_err(|e| bad(format!("manifest: {e}")))?;
    let data = &bytes[data_start..];
    if !data.len().is_multiple_of(8) {
        return Err(bad("data block is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut set = ParameterSet::new();
    for e in &manifest.params {
        if e.shape.iter().product::<usize>() != e.len || e.offset + e.len > values.len() {
            return Err(bad(format!("parameter {:?} has inconsistent extent", e.name)));
        }
        let t = Tensor::new(e.shape.clone(), values[e.offset..e.offset + e.len].to_vec())?;
        set.add(e.name.clone(), e.group, t);
    }
    Ok((manifest.model, set))
}

pub fn write_checkpoint(path: &Path, model: &serde_json::Value, set: &ParameterSet) -> Result<()> {
    fs::write(path, encode(model, set)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(serde_json::Value, ParameterSet)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
