//! Binary checkpoint format: magic, config record, then parameter tensors
//! and batch-norm running statistics in declaration order, all little-endian
//! with f64 payloads. Identical training runs produce byte-identical files.

use std::path::Path;

use super::{AttentionResNet, ModelConfig, ModelError, Target};
use crate::autodiff::{BnStats, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIOPTRA1";

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn save_checkpoint(model: &AttentionResNet, path: &Path) -> Result<(), ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let c = model.config();
    push_u32(&mut out, c.input_resolution as u32);
    for v in c.stem_channels {
        push_u32(&mut out, v as u32);
    }
    for v in c.block_channels {
        push_u32(&mut out, v as u32);
    }
    for v in c.block_strides {
        push_u32(&mut out, v as u32);
    }
    for v in c.fc_widths {
        push_u32(&mut out, v as u32);
    }
    out.push(match c.target {
        Target::SphericalEquivalent => 0,
        Target::Sphere => 1,
        Target::Cylinder => 2,
    });
    out.extend_from_slice(&c.seed.to_le_bytes());

    push_u32(&mut out, model.params().len() as u32);
    for (name, tensor) in model.param_names().iter().zip(model.params()) {
        let bytes = name.as_bytes();
        out.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            push_u32(&mut out, d as u32);
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    push_u32(&mut out, model.bn_stats().len() as u32);
    for stats in model.bn_stats() {
        push_u32(&mut out, stats.mean.len() as u32);
        for &v in &stats.mean {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &stats.var {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<AttentionResNet, ModelError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    let magic = r.take(8)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::CheckpointFormat(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let input_resolution = r.u32()? as usize;
    let stem_channels = [r.u32()? as usize, r.u32()? as usize];
    let block_channels = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let block_strides = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let fc_widths = [r.u32()? as usize, r.u32()? as usize];
    let target = match r.u8()? {
        0 => Target::SphericalEquivalent,
        1 => Target::Sphere,
        2 => Target::Cylinder,
        other => {
            return Err(ModelError::CheckpointFormat(format!(
                "unknown target code {other}"
            )))
        }
    };
    let seed = r.u64()?;

    let config = ModelConfig {
        input_resolution,
        stem_channels,
        block_channels,
        block_strides,
        fc_widths,
        target,
        seed,
    };
    let mut model = AttentionResNet::new(config)?;

    let n_params = r.u32()? as usize;
    if n_params != model.params().len() {
        return Err(ModelError::CheckpointFormat(format!(
            "{n_params} parameters, expected {}",
            model.params().len()
        )));
    }
    for i in 0..n_params {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        if name != model.param_names()[i] {
            return Err(ModelError::CheckpointFormat(format!(
                "parameter {i} named {name:?}, expected {:?}",
                model.param_names()[i]
            )));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f64s(numel)?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| ModelError::CheckpointFormat(format!("parameter {name}: {e}")))?;
        model.set_param(i, tensor)?;
    }

    let n_stats = r.u32()? as usize;
    if n_stats != model.bn_stats().len() {
        return Err(ModelError::CheckpointFormat(format!(
            "{n_stats} stat records, expected {}",
            model.bn_stats().len()
        )));
    }
    for i in 0..n_stats {
        let channels = r.u32()? as usize;
        if channels != model.bn_stats()[i].mean.len() {
            return Err(ModelError::CheckpointFormat(format!(
                "stat record {i} has {channels} channels, expected {}",
                model.bn_stats()[i].mean.len()
            )));
        }
        let mean = r.f64s(channels)?;
        let var = r.f64s(channels)?;
        model.bn_stats_mut()[i] = BnStats { mean, var };
    }
    if r.pos != bytes.len() {
        return Err(ModelError::CheckpointFormat(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::CheckpointFormat("unexpected end of file".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
