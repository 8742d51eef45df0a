//! Binary checkpoint: magic, header length, JSON header, f64 payload.
//!
//! ```text
//! b"NLICKPT\0" | u32 LE header length | header JSON | little-endian f64 values
//! ```
//! Offsets in the header count f64 elements from the payload start.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::weights::encoder_layout;
use super::{EncoderWeights, HeadKind, Model, ModelConfig, ModelError, TaskHead};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NLICKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Cap on the JSON header so a corrupt length cannot trigger a huge read.
const MAX_HEADER_BYTES: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub head: Option<HeadKind>,
    pub arrays: Vec<ArrayEntry>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Model {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let params = self.params();
        let mut arrays = Vec::with_capacity(params.len());
        let mut offset = 0;
        for (name, t) in &params {
            arrays.push(ArrayEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel();
        }
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            head: self.head_kind(),
            arrays,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + offset * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Strict decode: every expected array present exactly once, shapes
    /// forced by the config, payload contiguous and fully consumed.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        if header_len > MAX_HEADER_BYTES || 12 + header_len > bytes.len() {
            return Err(bad(format!("header length {header_len} exceeds file")));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "format version {} is not supported (expected {CHECKPOINT_VERSION})",
                header.format_version
            )));
        }
        header
            .config
            .validate()
            .map_err(|e| bad(format!("stored config: {e}")))?;
        let payload = &bytes[12 + header_len..];
        if !payload.len().is_multiple_of(8) {
            return Err(bad("payload is not a whole number of f64 values"));
        }
        let total = payload.len() / 8;

        let mut expected: BTreeMap<String, Vec<usize>> = encoder_layout(&header.config)
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        let head_names = header.head.map(|kind| {
            let probe = TaskHead {
                kind,
                weight: Tensor::zeros(vec![0]),
                bias: Tensor::zeros(vec![0]),
            };
            let out = TaskHead::output_dim(kind, &header.config);
            expected.insert(probe.weight_name().into(), vec![header.config.hidden_dim, out]);
            expected.insert(probe.bias_name().into(), vec![out]);
            (probe.weight_name(), probe.bias_name())
        });

        let mut next = 0usize;
        let mut loaded: BTreeMap<String, Tensor> = BTreeMap::new();
        for entry in &header.arrays {
            let want = expected
                .remove(&entry.name)
                .ok_or_else(|| bad(format!("unexpected or duplicate array {:?}", entry.name)))?;
            if want != entry.shape {
                return Err(bad(format!(
                    "array {} has shape {:?}, config requires {:?}",
                    entry.name, entry.shape, want
                )));
            }
            if entry.offset != next {
                return Err(bad(format!("array {} offset {} is not contiguous", entry.name, entry.offset)));
            }
            let n: usize = want.iter().product();
            let end = next.checked_add(n).filter(|&e| e <= total).ok_or_else(|| {
                bad(format!("array {} runs past the payload", entry.name))
            })?;
            let data = payload[next * 8..end * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            loaded.insert(entry.name.clone(), Tensor::new(want, data)?);
            next = end;
        }
        if let Some(missing) = expected.keys().next() {
            return Err(bad(format!("array {missing:?} is missing")));
        }
        if next != total {
            return Err(bad(format!("{} trailing payload values", total - next)));
        }

        let head = match (header.head, head_names) {
            (Some(kind), Some((w, b))) => Some(TaskHead {
                kind,
                weight: loaded.remove(w).expect("checked above"),
                bias: loaded.remove(b).expect("checked above"),
            }),
            _ => None,
        };
        Ok(Model::from_parts(header.config, EncoderWeights::from_arrays(loaded), head))
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        let io = |e| ModelError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_checkpoint_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Model::from_checkpoint_bytes(&bytes)
    }

    /// Loads and additionally requires the stored config to equal `expected`.
    pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Model, ModelError> {
        let m = Model::load_checkpoint(path)?;
        if &m.config != expected {
            return Err(bad(format!(
                "stored config {:?} does not match expected {:?}",
                m.config, expected
            )));
        }
        Ok(m)
    }
}
