//! `BFT1` feature files: little-endian, magic `BFT1`, `u32` channels,
//! `u32` frames, `u32` mels, `u8` layout tag, then `f32` values in C order
//! with channels outermost.

use std::path::Path;

use ndarray::Array3;

use super::{FeatureSet, FeatureTensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BFT1";
const HEADER_LEN: usize = 4 + 4 * 3 + 1;

pub fn encode(tensor: &FeatureTensor) -> Vec<u8> {
    let (ch, t, m) = tensor.data.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * tensor.data.len());
    out.extend_from_slice(MAGIC);
    for dim in [ch, t, m] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.push(tensor.layout.tag());
    for v in tensor.data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FeatureTensor> {
    let bad = |message: String| Error::Format {
        what: "feature file",
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (ch, t, m) = (dim(0), dim(1), dim(2));
    let layout = FeatureSet::from_tag(bytes[16])
        .ok_or_else(|| bad(format!("unknown layout tag {}", bytes[16])))?;
    if ch != layout.channels() {
        return Err(bad(format!(
            "{} channels stored for layout {layout} which has {}",
            ch,
            layout.channels()
        )));
    }
    let count = ch
        .checked_mul(t)
        .and_then(|n| n.checked_mul(m))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count.saturating_mul(4) {
        return Err(bad(format!(
            "payload is {} bytes, header declares {count} floats",
            payload.len()
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    let data = Array3::from_shape_vec((ch, t, m), values).map_err(|e| bad(e.to_string()))?;
    Ok(FeatureTensor { data, layout })
}

pub fn write(path: &Path, tensor: &FeatureTensor) -> Result<()> {
    std::fs::write(path, encode(tensor)).map_err(|e| Error::from(e).in_file(path))
}

pub fn read(path: &Path) -> Result<FeatureTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}
