//! Checkpoint file: the 8-byte magic `H3RCKPT1`, a little-endian `u32`
//! header length, a JSON header (format version, [`ModelConfig`] and the
//! parameter table in storage order), then every parameter as
//! little-endian `f64` in row-major order. Loading matches parameters by
//! name and restores them bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::network::Hand3R;
use crate::params::ParamGroup;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"H3RCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    rotation_repr: String,
    config: ModelConfig,
    params: Vec<Entry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    group: ParamGroup,
    shape: [usize; 2],
}

pub fn to_bytes(model: &Hand3R) -> Vec<u8> {
    let params = model
        .store
        .all()
        .iter()
        .map(|p| Entry { name: p.name.clone(), group: p.group, shape: [p.value.nrows(), p.value.ncols()] })
        .collect();
    let header = Header { format_version: FORMAT_VERSION, rotation_repr: "rot6d".into(), config: model.config.clone(), params };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + model.store.count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.store.all() {
        for v in p.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Hand3R> {
    let bad = |msg: String| Error::format(path, msg);
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a hand3r checkpoint (bad magic)".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {} (expected {FORMAT_VERSION})", header.format_version)));
    }
    if header.rotation_repr != "rot6d" {
        return Err(bad(format!("unsupported rotation representation {}", header.rotation_repr)));
    }
    let mut model = Hand3R::new(header.config)?;
    let mut offset = 12 + hlen;
    let mut seen = vec![false; model.store.len()];
    for e in &header.params {
        let n = e.shape[0] * e.shape[1];
        let data = bytes.get(offset..offset + 8 * n).ok_or_else(|| bad(format!("truncated data for {}", e.name)))?;
        offset += 8 * n;
        let id = model.store.find(&e.name).ok_or_else(|| bad(format!("unknown parameter {}", e.name)))?;
        let value = model.store.value_mut(id);
        if value.dim() != (e.shape[0], e.shape[1]) {
            return Err(bad(format!("parameter {} has shape {:?}, model expects {:?}", e.name, e.shape, value.dim())));
        }
        for (dst, chunk) in value.iter_mut().zip(data.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        seen[id.0] = true;
    }
    if offset != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - offset)));
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(bad(format!("missing parameter {}", model.store.all()[i].name)));
    }
    Ok(model)
}

pub fn save(model: &Hand3R, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Hand3R> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
