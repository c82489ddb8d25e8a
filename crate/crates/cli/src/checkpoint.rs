//! Network checkpoints.
//!
//! Byte layout: the 8-byte magic `FLOWCKPT`, the header length as a
//! little-endian `u64`, the UTF-8 JSON header, then `parameter_count`
//! little-endian `f64` values.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flowinfer_core::nn::{Architecture, NetworkParameters};
use serde::{Deserialize, Serialize};

use crate::error::InputError;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FLOWCKPT";
pub const EXTENSION: &str = "ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub architecture: Architecture,
    pub parameter_count: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Fingerprint of the covariate layout the network was trained on.
    pub layout_fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: NetworkParameters,
}

impl Checkpoint {
    pub fn new(params: NetworkParameters, seed: u64, config_hash: String, layout_fingerprint: u64) -> Self {
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            architecture: *params.arch(),
            parameter_count: params.len(),
            seed,
            config_hash,
            layout_fingerprint,
        };
        Self { header, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| anyhow::Error::from(InputError(format!("invalid checkpoint: {m}")));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16usize.saturating_add(len)).ok_or_else(|| bad("truncated header"))?;
        let value: serde_json::Value = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(bad(&format!("format version {version:?}, expected {CHECKPOINT_VERSION}")));
        }
        let header: CheckpointHeader = serde_json::from_value(value).map_err(|e| bad(&e.to_string()))?;
        let payload = &bytes[16 + len..];
        if payload.len() != 8 * header.parameter_count {
            return Err(bad(&format!("payload holds {} bytes, expected {}", payload.len(), 8 * header.parameter_count)));
        }
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let params = NetworkParameters::from_flat(header.architecture, data).map_err(|e| bad(&e.to_string()))?;
        Ok(Self { header, params })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).with_context(|| format!("in {}", path.display()))
    }
}

/// Checkpoint files of a model directory in name order.
pub fn model_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| InputError(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == EXTENSION))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(InputError(format!("{}: no .{EXTENSION} files", dir.display())).into());
    }
    Ok(files)
}

/// Load every member of a model directory and check it fits `layout_fingerprint`.
pub fn load_model(dir: &Path, layout_fingerprint: u64) -> Result<Vec<Checkpoint>> {
    model_files(dir)?
        .iter()
        .map(|p| {
            let c = Checkpoint::load(p)?;
            if c.header.layout_fingerprint != layout_fingerprint {
                return Err(InputError(format!("{}: trained on a different covariate layout", p.display())).into());
            }
            Ok(c)
        })
        .collect()
}
