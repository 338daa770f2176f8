//! `.mdck` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   b"MDCKPT\0\0"
//! version    u32
//! meta_len   u64
//! meta       meta_len bytes of JSON (role, layer dims, class count, frozen flag, training meta)
//! payload    f64 values: per layer weights (row-major) then biases,
//!            then centers (D×n row-major), then the n center norms
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{Error, Result};
use crate::geometry::ClassCenters;
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"MDCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: u64,
    pub final_loss: f64,
    pub seed: u64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub role: Role,
    pub params: MlpParams,
    pub centers: ClassCenters,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    role: Role,
    layer_dims: Vec<usize>,
    classes: usize,
    frozen: bool,
    training_meta: TrainingMeta,
}

impl Checkpoint {
    pub fn embedding_dim(&self) -> usize {
        self.params.embedding_dim()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.validate()?;
        if self.centers.dim() != self.params.embedding_dim() {
            return Err(Error::DimensionMismatch(format!(
                "centers have dimension {}, network outputs {}",
                self.centers.dim(),
                self.params.embedding_dim()
            )));
        }
        let header = Header {
            role: self.role,
            layer_dims: self.params.layer_dims.clone(),
            classes: self.centers.classes(),
            frozen: self.centers.is_frozen(),
            training_meta: self.meta.clone(),
        };
        let meta = serde_json::to_vec(&header).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(meta.len() + 8 * payload_len(&header.layer_dims, header.classes) + 20);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let mut put = |values: &[f64]| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (w, b) in self.params.weights.iter().zip(&self.params.biases) {
            put(w.as_slice());
            put(b);
        }
        put(self.centers.matrix().as_slice());
        put(self.centers.norms());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptCheckpoint(msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version == 0 || version > CHECKPOINT_VERSION {
            return Err(Error::CorruptCheckpoint(format!(
                "unsupported format version {version} (supported: {CHECKPOINT_VERSION})"
            )));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let meta_end = 20usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated metadata"))?;
        let header: Header = serde_json::from_slice(&bytes[20..meta_end])
            .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
        let dims = &header.layer_dims;
        if dims.is_empty() || dims.contains(&0) || header.classes == 0 || dims[dims.len() - 1] < 2 {
            return Err(corrupt("invalid shape in metadata"));
        }
        let expected = payload_len(dims, header.classes)
            .checked_mul(8)
            .ok_or_else(|| corrupt("shape overflow"))?;
        let payload = &bytes[meta_end..];
        if payload.len() != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "payload is {} bytes, metadata implies {expected}",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            weights.push(Matrix::from_vec(pair[1], pair[0], take(pair[0] * pair[1]))?);
            biases.push(take(pair[1]));
        }
        let d = dims[dims.len() - 1];
        let unit = Matrix::from_vec(d, header.classes, take(d * header.classes))?;
        let norms = take(header.classes);
        let params = MlpParams {
            layer_dims: dims.clone(),
            weights,
            biases,
        };
        params
            .validate()
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let centers = ClassCenters::from_parts(unit, norms, header.frozen)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Ok(Self {
            format_version: version,
            role: header.role,
            params,
            centers,
            meta: header.training_meta,
        })
    }
}

fn payload_len(dims: &[usize], classes: usize) -> usize {
    let layers: usize = dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    layers + dims[dims.len() - 1] * classes + classes
}

pub fn checkpoint_save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ck.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
