//! `Y4KW` weight container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "Y4KW"
//! 4       4     u32 version (1), little-endian
//! 8       8     u64 manifest byte length, little-endian
//! 16      m     UTF-8 JSON manifest:
//!               [{"name", "dtype": "f32", "shape": [..], "offset", "nbytes"}, ..]
//! ..            zero padding up to the next multiple of 64 (none if aligned)
//! D       ..    data section; each tensor is little-endian f32 at D + offset
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamTensor, WeightStore};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"Y4KW";
pub const CONTAINER_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

fn data_start(manifest_len: usize) -> usize {
    (HEADER_LEN + manifest_len).next_multiple_of(ALIGN)
}

pub fn encode(store: &WeightStore) -> Result<Vec<u8>> {
    let mut manifest = Vec::with_capacity(store.len());
    let mut offset = 0u64;
    for (name, p) in store.iter() {
        let nbytes = (p.numel() * 4) as u64;
        manifest.push(ManifestEntry {
            name: name.to_string(),
            dtype: "f32".into(),
            shape: p.dims().to_vec(),
            offset,
            nbytes,
        });
        offset += nbytes;
    }
    let json = serde_json::to_vec(&manifest)?;
    let start = data_start(json.len());
    let mut out = Vec::with_capacity(start + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.resize(start, 0);
    for (_, p) in store.iter() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<WeightStore> {
    if bytes.len() < 4 {
        return Err(Error::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4-byte slice"));
    if version != CONTAINER_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8-byte slice"));
    let manifest_end = (HEADER_LEN as u64)
        .checked_add(manifest_len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| Error::Truncated(format!("manifest of {manifest_len} bytes exceeds file")))?
        as usize;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| Error::Inconsistent(format!("manifest is not valid JSON: {e}")))?;
    let start = data_start(manifest_len as usize);

    let mut seen = HashSet::new();
    let mut store = WeightStore::new();
    for entry in manifest {
        if !seen.insert(entry.name.clone()) {
            return Err(Error::Inconsistent(format!("duplicate tensor {:?}", entry.name)));
        }
        if entry.dtype != "f32" {
            return Err(Error::Inconsistent(format!(
                "tensor {:?} has dtype {:?}, only \"f32\" is supported",
                entry.name, entry.dtype
            )));
        }
        let numel = entry
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::Inconsistent(format!("tensor {:?} shape overflows", entry.name)))?;
        if numel.checked_mul(4) != Some(entry.nbytes) {
            return Err(Error::Inconsistent(format!(
                "tensor {:?} has shape {:?} ({numel} elements) but nbytes {}",
                entry.name, entry.shape, entry.nbytes
            )));
        }
        let lo = (start as u64).checked_add(entry.offset);
        let hi = lo.and_then(|l| l.checked_add(entry.nbytes));
        let (lo, hi) = match (lo, hi) {
            (Some(lo), Some(hi)) if hi <= bytes.len() as u64 => (lo as usize, hi as usize),
            _ => {
                return Err(Error::Truncated(format!(
                    "tensor {:?} spans bytes {}..{} of a {}-byte file",
                    entry.name,
                    start as u64 + entry.offset,
                    start as u64 + entry.offset + entry.nbytes,
                    bytes.len()
                )))
            }
        };
        let data = bytes[lo..hi]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        store.insert(entry.name, ParamTensor::new(entry.shape, data)?)?;
    }
    Ok(store)
}

pub fn save(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<WeightStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
