//! `.mdds` dataset files.
//!
//! ```text
//! magic       8 bytes  b"MDDSET\0\0"
//! header_len  u64 LE
//! header      JSON {version, samples, dim, classes, seed}
//! inputs      samples × dim f64 LE, row-major
//! labels      samples × u32 LE
//! splits      samples × u8 (0 = train, 1 = eval)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"MDDSET\0\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    samples: usize,
    dim: usize,
    classes: usize,
    seed: u64,
}

pub(crate) fn to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let header = Header {
        version: DATASET_VERSION,
        samples: ds.len(),
        dim: ds.input_dim(),
        classes: ds.classes,
        seed: ds.seed,
    };
    let head = serde_json::to_vec(&header).map_err(|e| Error::CorruptDataset(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + head.len() + ds.len() * (ds.input_dim() * 8 + 5));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    for v in ds.inputs.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &ds.labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    out.extend(ds.splits.iter().map(|s| match s {
        Split::Train => 0u8,
        Split::Eval => 1u8,
    }));
    Ok(out)
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let corrupt = |m: String| Error::CorruptDataset(m);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let head_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let head_end = 16usize
        .checked_add(head_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..head_end]).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.version == 0 || header.version > DATASET_VERSION {
        return Err(corrupt(format!("unsupported dataset version {}", header.version)));
    }
    let m = header.samples;
    let input_bytes = m
        .checked_mul(header.dim)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| corrupt("header sizes overflow".into()))?;
    let body = &bytes[head_end..];
    let labels_end = input_bytes + 4 * m;
    if body.len() < labels_end {
        return Err(corrupt(format!(
            "body is {} bytes, inputs and labels need {labels_end}",
            body.len()
        )));
    }
    if body.len() < labels_end + m {
        return Err(corrupt("missing split tags".into()));
    }
    if body.len() > labels_end + m {
        return Err(corrupt("trailing bytes after split tags".into()));
    }
    let inputs: Vec<f64> = body[..input_bytes]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels: Vec<usize> = body[input_bytes..labels_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let splits = body[labels_end..]
        .iter()
        .map(|&b| match b {
            0 => Ok(Split::Train),
            1 => Ok(Split::Eval),
            other => Err(corrupt(format!("invalid split tag {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(corrupt("non-finite input value".into()));
    }
    let inputs = Matrix::from_vec(m, header.dim, inputs)?;
    Dataset::new(inputs, labels, header.classes, splits, header.seed).map_err(|e| corrupt(e.to_string()))
}

pub fn dataset_save(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(ds)?).map_err(|e| Error::io(path, e))
}

pub fn dataset_load(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
