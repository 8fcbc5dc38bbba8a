//! The ALTIWGT1 weight file.
//!
//! ```text
//! "ALTIWGT1"                 8 bytes
//! manifest length            u64, little-endian
//! manifest                   UTF-8 JSON
//! payload                    raw little-endian f32 tensors
//! payload checksum           u32 CRC-32 (IEEE), little-endian
//! ```
//!
//! The manifest is `{format_version, config, tensors: [{name, shape, dtype,
//! byte_offset, byte_len, crc32}]}`; offsets are relative to the payload start.
//! Tensors are written in canonical order (see [`crate::model::weights`]).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::weights::TransformerWeights;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"ALTIWGT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
    pub byte_len: usize,
    /// Per-tensor CRC-32, so corruption can be pinned to a tensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crc32: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Serializes weights to an in-memory ALTIWGT1 image. Values are stored as f32.
pub fn encode_model<S: Scalar>(config: &ModelConfig, weights: &TransformerWeights<S>) -> Result<Vec<u8>> {
    weights.validate(config)?;
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, data) in weights.tensors() {
        let start = payload.len();
        for v in data {
            payload.extend_from_slice(&v.to_f32().to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape,
            dtype: "f32".into(),
            byte_offset: start,
            byte_len: payload.len() - start,
            crc32: Some(crc32fast::hash(&payload[start..])),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(8 + 8 + json.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

pub fn save_model<S: Scalar>(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    weights: &TransformerWeights<S>,
) -> Result<()> {
    let bytes = encode_model(config, weights)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Splits an image into manifest and payload, checking magic and payload checksum.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let len_bytes: [u8; 8] = bytes
        .get(8..16)
        .ok_or_else(|| Error::Manifest("file ends before manifest length".into()))?
        .try_into()
        .expect("8 bytes");
    let json_len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| Error::Manifest("manifest length overflows".into()))?;
    let json_end = 16usize
        .checked_add(json_len)
        .filter(|&end| end + 4 <= bytes.len())
        .ok_or_else(|| Error::Manifest("manifest length exceeds file size".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..json_end]).map_err(|e| Error::Manifest(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported format_version {}",
            manifest.format_version
        )));
    }
    let payload = &bytes[json_end..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        // Name the first damaged tensor when the manifest carries per-tensor sums.
        let culprit = manifest.tensors.iter().find(|t| {
            t.crc32.is_some()
                && payload
                    .get(t.byte_offset..t.byte_offset.saturating_add(t.byte_len))
                    .is_some_and(|b| Some(crc32fast::hash(b)) != t.crc32)
        });
        return Err(Error::ChecksumMismatch {
            name: culprit.map_or_else(|| "<payload>".to_string(), |t| t.name.clone()),
            stored,
            computed,
        });
    }
    Ok((manifest, payload))
}

/// Decodes an in-memory ALTIWGT1 image, validating every tensor.
pub fn decode_model<S: Scalar>(bytes: &[u8]) -> Result<(ModelConfig, TransformerWeights<S>)> {
    let (manifest, payload) = read_manifest(bytes)?;
    manifest.config.validate()?;
    let mut entries: HashMap<&str, &TensorEntry> = HashMap::new();
    for t in &manifest.tensors {
        if entries.insert(t.name.as_str(), t).is_some() {
            return Err(Error::Manifest(format!("duplicate tensor `{}`", t.name)));
        }
    }
    let mut used = 0usize;
    let weights = TransformerWeights::from_tensors(&manifest.config, |spec| {
        let entry = entries.get(spec.name.as_str()).ok_or_else(|| Error::MissingTensor {
            name: spec.name.clone(),
        })?;
        if entry.dtype != "f32" {
            return Err(Error::UnsupportedDtype {
                name: entry.name.clone(),
                dtype: entry.dtype.clone(),
            });
        }
        if entry.shape != spec.shape {
            return Err(Error::ShapeMismatch {
                name: entry.name.clone(),
                expected: spec.shape.clone(),
                found: entry.shape.clone(),
            });
        }
        let numel = spec.numel();
        if entry.byte_len != numel * 4 {
            return Err(Error::ShapeMismatch {
                name: entry.name.clone(),
                expected: spec.shape.clone(),
                found: vec![entry.byte_len / 4],
            });
        }
        let end = entry.byte_offset.saturating_add(entry.byte_len);
        let raw = payload.get(entry.byte_offset..end).ok_or(Error::Truncated {
            name: entry.name.clone(),
            offset: entry.byte_offset,
            end,
            payload_len: payload.len(),
        })?;
        if let Some(stored) = entry.crc32 {
            let computed = crc32fast::hash(raw);
            if stored != computed {
                return Err(Error::ChecksumMismatch {
                    name: entry.name.clone(),
                    stored,
                    computed,
                });
            }
        }
        used += 1;
        Ok(raw
            .chunks_exact(4)
            .map(|c| S::from_f32(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect())
    })?;
    if used != manifest.tensors.len() {
        let required: Vec<String> = weights.tensors().into_iter().map(|(n, _, _)| n).collect();
        let extra = manifest
            .tensors
            .iter()
            .find(|t| !required.contains(&t.name))
            .map_or_else(String::new, |t| t.name.clone());
        return Err(Error::UnexpectedTensor { name: extra });
    }
    Ok((manifest.config, weights))
}

/// Reads and validates an ALTIWGT1 file.
pub fn load_model<S: Scalar>(path: impl AsRef<Path>) -> Result<(ModelConfig, TransformerWeights<S>)> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}
