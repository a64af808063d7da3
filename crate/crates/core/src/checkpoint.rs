//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes   "CVRNNCK1"
//! header_len  u32
//! header      header_len bytes of UTF-8 JSON (the ModelConfig)
//! count       u32       number of tensors
//! per tensor:
//!   name_len  u32
//!   name      name_len bytes of UTF-8
//!   ndim      u32       always 4
//!   dims      ndim × u64
//!   values    product(dims) × f64 (IEEE-754 bits)
//! ```
//!
//! Trainable parameters come first in [`ModelParams::named`] order, then the running
//! statistics in [`ModelParams::buffers`] order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, SegmentationModel};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"CVRNNCK1";
const FORMAT: &str = "checkpoint";
/// Upper bound on a single header or name, to reject absurd lengths early.
const MAX_STRING: usize = 1 << 20;

pub fn encode(model: &SegmentationModel) -> Vec<u8> {
    let header = serde_json::to_vec(&model.config).expect("config serializes");
    let tensors: Vec<(String, &Tensor)> = model
        .params
        .named()
        .into_iter()
        .chain(model.params.buffers())
        .collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&4u32.to_le_bytes());
        for d in t.shape().dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(FORMAT, format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let len = self.u32(what)? as usize;
        if len > MAX_STRING {
            return Err(Error::format(FORMAT, format!("{what} length {len} too large")));
        }
        std::str::from_utf8(self.take(len, what)?)
            .map_err(|_| Error::format(FORMAT, format!("{what} is not UTF-8")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// Parses the container without interpreting the tensors.
pub fn decode_raw(bytes: &[u8]) -> Result<(ModelConfig, Vec<(String, Tensor)>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::format(FORMAT, "bad magic"));
    }
    let header = r.string("header")?;
    let config: ModelConfig = serde_json::from_str(header)
        .map_err(|e| Error::format(FORMAT, format!("header: {e}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.string("tensor name")?.to_owned();
        let ndim = r.u32("rank")?;
        if ndim != 4 {
            return Err(Error::format(FORMAT, format!("{name}: rank {ndim}, expected 4")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = usize::try_from(r.u64("dimension")?)
                .map_err(|_| Error::format(FORMAT, "dimension overflows usize"))?;
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::format(FORMAT, format!("{name}: payload truncated")))?;
        let raw = r.take(numel * 8, "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        tensors.push((name, Tensor::from_vec(shape, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::format(FORMAT, format!("{} trailing bytes", r.remaining())));
    }
    Ok((config, tensors))
}

fn fill(names: &[String], slots: Vec<&mut Tensor>, tensors: Vec<(String, Tensor)>) -> Result<()> {
    for ((want, slot), (name, t)) in names.iter().zip(slots).zip(tensors) {
        if *want != name {
            return Err(Error::format(FORMAT, format!("expected tensor {want}, found {name}")));
        }
        if slot.shape() != t.shape() {
            return Err(Error::format(
                FORMAT,
                format!("{name}: shape {} but config implies {}", t.shape(), slot.shape()),
            ));
        }
        *slot = t;
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<SegmentationModel> {
    let (config, tensors) = decode_raw(bytes)?;
    let mut params = ModelParams::init(&config)?;
    let names: Vec<String> = params
        .named()
        .into_iter()
        .chain(params.buffers())
        .map(|(n, _)| n)
        .collect();
    if names.len() != tensors.len() {
        return Err(Error::format(
            FORMAT,
            format!("{} tensors, config implies {}", tensors.len(), names.len()),
        ));
    }
    let mut incoming: Vec<(String, Tensor)> = tensors;
    let buffers = incoming.split_off(params.named().len());
    fill(&names, params.tensors_mut(), incoming)?;
    fill(&names[names.len() - buffers.len()..], params.buffers_mut(), buffers)?;
    SegmentationModel::from_parts(config, params)
}

/// Writes through a temporary file and renames, so an existing checkpoint is replaced
/// only by a complete one.
pub fn save(model: &SegmentationModel, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(model)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SegmentationModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = SegmentationModel::new(ModelConfig::tiny()).unwrap();
        let bytes = encode(&model);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn truncation_and_corruption_rejected() {
        let model = SegmentationModel::new(ModelConfig::tiny()).unwrap();
        let bytes = encode(&model);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let mut bytes = MAGIC.to_vec();
        let header = serde_json::to_vec(&ModelConfig::tiny()).unwrap();
        bytes.extend((header.len() as u32).to_le_bytes());
        bytes.extend(header);
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(1u32.to_le_bytes());
        bytes.push(b'w');
        bytes.extend(4u32.to_le_bytes());
        for _ in 0..4 {
            bytes.extend(u64::MAX.to_le_bytes());
        }
        assert!(decode_raw(&bytes).is_err());
    }
}
