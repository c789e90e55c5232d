use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{NetLayout, ToyDetector};
use super::SatError;

pub const CHECKPOINT_FORMAT: &str = "dune-detect-toy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub layout: NetLayout,
    pub param_count: usize,
}

/// `u64` header length, JSON header, then the parameters as little-endian
/// `f64`s.
pub fn encode_checkpoint(det: &ToyDetector) -> Vec<u8> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        layout: det.layout.clone(),
        param_count: det.params.len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 8 * det.params.len());
    out.extend((json.len() as u64).to_le_bytes());
    out.extend(json);
    for p in &det.params {
        out.extend(p.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ToyDetector, SatError> {
    let bad = |m: &str| SatError::Checkpoint(m.to_string());
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated header length"))?.try_into().expect("8 bytes");
    let len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(8..8usize.saturating_add(len)).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| SatError::Checkpoint(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(bad("unsupported checkpoint format"));
    }
    let body = &bytes[8 + len..];
    if body.len() != 8 * header.param_count {
        return Err(bad("parameter block size does not match header"));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ToyDetector::from_params(header.layout, params)
}

pub fn save_checkpoint(det: &ToyDetector, path: &Path) -> Result<(), SatError> {
    fs::write(path, encode_checkpoint(det)).map_err(|source| SatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ToyDetector, SatError> {
    let bytes = fs::read(path).map_err(|source| SatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
