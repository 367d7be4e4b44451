//! "BMK1" checkpoints: the model configuration, task mode and input layout,
//! then every parameter tensor in declaration order followed by the running
//! batch-norm statistics. All numbers are little-endian.

use std::path::Path;

use super::network::MtlNetwork;
use super::ModelConfig;
use crate::features::FeatureSet;
use crate::metrics::TaskMode;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BMK1";
const NO_LAYOUT: u8 = u8::MAX;

fn config_fields(c: &ModelConfig) -> [usize; 17] {
    [
        c.in_channels,
        c.mels,
        c.frames,
        c.kernel[0],
        c.kernel[1],
        c.filters[0],
        c.filters[1],
        c.pooling[0],
        c.pooling[1],
        c.pooling[2],
        c.pooling[3],
        c.pooling[4],
        c.gru_width,
        c.dense[0],
        c.dense[1],
        c.dense[2],
        c.sed_classes,
    ]
}

pub fn encode(net: &MtlNetwork) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let put_u32 = |out: &mut Vec<u8>, v: usize| -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{v} does not fit a checkpoint field")))?;
        out.extend_from_slice(&v.to_le_bytes());
        Ok(())
    };
    for v in config_fields(&net.config) {
        put_u32(&mut out, v)?;
    }
    put_u32(&mut out, net.config.asc_classes)?;
    out.extend_from_slice(&net.config.asc_loss_weight.to_le_bytes());
    out.push(net.mode.tag());
    out.push(net.layout.map_or(NO_LAYOUT, FeatureSet::tag));

    let mut tensors: Vec<(Vec<usize>, &[f64])> =
        net.params.tensors().into_iter().map(|(_, _, data, shape)| (shape, data)).collect();
    for stats in &net.running {
        tensors.push((vec![stats.mean.len()], stats.mean.as_slice().expect("contiguous")));
        tensors.push((vec![stats.var.len()], stats.var.as_slice().expect("contiguous")));
    }
    put_u32(&mut out, tensors.len())?;
    for (shape, data) in tensors {
        put_u32(&mut out, shape.len())?;
        for d in shape {
            put_u32(&mut out, d)?;
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format_err(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

fn format_err(message: String) -> Error {
    Error::Format { what: "checkpoint", message }
}

/// Shapes [`encode`] writes for a configuration, without allocating the
/// network.
fn expected_shapes(c: &ModelConfig, mode: TaskMode) -> Vec<Vec<usize>> {
    let [kh, kw] = c.kernel;
    let [p1, p2] = c.filters;
    let conv = |out: &mut Vec<Vec<usize>>, inputs: usize, filters: usize| {
        out.extend([vec![filters, inputs, kh, kw], vec![filters], vec![filters], vec![filters]]);
    };
    let mut shapes = Vec::new();
    conv(&mut shapes, c.in_channels, p1);
    conv(&mut shapes, p1, p1);
    conv(&mut shapes, p1, p1);
    if mode.has_sed() {
        let h = c.gru_width / 2;
        for _ in 0..2 {
            shapes.extend([vec![3 * h, c.gru_input()], vec![3 * h, h], vec![3 * h]]);
        }
        shapes.extend([
            vec![c.dense[0], c.gru_width],
            vec![c.dense[0]],
            vec![c.sed_classes, c.dense[0]],
            vec![c.sed_classes],
        ]);
    }
    if mode.has_asc() {
        conv(&mut shapes, p1, p2);
        conv(&mut shapes, p2, p2);
        shapes.extend([
            vec![c.dense[1], p2 * c.encoded_mels()],
            vec![c.dense[1]],
            vec![c.dense[2], c.dense[1]],
            vec![c.dense[2]],
            vec![c.asc_classes, c.dense[2]],
            vec![c.asc_classes],
        ]);
    }
    let mut stats = vec![vec![p1]; 6];
    if mode.has_asc() {
        stats.extend(vec![vec![p2]; 4]);
    }
    shapes.extend(stats);
    shapes
}

pub fn decode(bytes: &[u8]) -> Result<MtlNetwork> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("bad magic".into()));
    }
    let mut f = [0usize; 18];
    for v in &mut f {
        *v = r.u32()?;
    }
    let config = ModelConfig {
        in_channels: f[0],
        mels: f[1],
        frames: f[2],
        kernel: [f[3], f[4]],
        filters: [f[5], f[6]],
        pooling: [f[7], f[8], f[9], f[10], f[11]],
        gru_width: f[12],
        dense: [f[13], f[14], f[15]],
        sed_classes: f[16],
        asc_classes: f[17],
        asc_loss_weight: r.f64()?,
    };
    config.validate()?;
    let mode_tag = r.u8()?;
    let mode = TaskMode::from_tag(mode_tag).ok_or_else(|| format_err(format!("unknown task mode tag {mode_tag}")))?;
    let layout = match r.u8()? {
        NO_LAYOUT => None,
        tag => Some(FeatureSet::from_tag(tag).ok_or_else(|| format_err(format!("unknown layout tag {tag}")))?),
    };

    let expected = expected_shapes(&config, mode);
    let count = r.u32()?;
    if count != expected.len() {
        return Err(format_err(format!("{count} tensors, expected {}", expected.len())));
    }
    let mut values = Vec::with_capacity(count);
    for (i, want) in expected.iter().enumerate() {
        let ndim = r.u32()?;
        if ndim != want.len() {
            return Err(format_err(format!("tensor {i} has {ndim} dimensions, expected {}", want.len())));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()?);
        }
        if &shape != want {
            return Err(format_err(format!("tensor {i} has shape {shape:?}, expected {want:?}")));
        }
        let bytes_needed = shape
            .iter()
            .try_fold(8usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format_err(format!("tensor {i} is too large")))?;
        let raw = r.take(bytes_needed)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(format_err(format!("tensor {i} contains non-finite values")));
        }
        values.push(data);
    }
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    // every tensor is present and well formed, so building the network
    // allocates no more than the file holds
    let mut net = MtlNetwork::new(config, mode, layout, 0)?;
    let mut values = values.into_iter();
    for (_, dst) in net.params.tensors_mut() {
        dst.copy_from_slice(&values.next().expect("count checked"));
    }
    for stats in &mut net.running {
        stats.mean.as_slice_mut().expect("contiguous").copy_from_slice(&values.next().expect("count checked"));
        stats.var.as_slice_mut().expect("contiguous").copy_from_slice(&values.next().expect("count checked"));
    }
    if net.running.iter().any(|s| s.var.iter().any(|&v| v < 0.0)) {
        return Err(format_err("negative running variance".into()));
    }
    Ok(net)
}

pub fn write(path: impl AsRef<Path>, net: &MtlNetwork) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(net).map_err(|e| e.in_file(path))?;
    std::fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

pub fn read(path: impl AsRef<Path>) -> Result<MtlNetwork> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode(&bytes).map_err(|e| e.in_file(path))
}
