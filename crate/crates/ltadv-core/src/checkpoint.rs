//! Flat binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "LTCK"            4 bytes
//! version u16              currently 1
//! arch    u8               0 linear, 1 mlp, 2 tinyconv
//! extras  u16 n, u32 × n   hidden sizes (mlp) or channels (tinyconv)
//! input   u8 ndim, u32 × ndim
//! classes u32
//! params  u32 count, then per entry (sorted by name):
//!         u16 name_len, name bytes, u8 ndim, u32 × ndim, f64 × len
//! check   u64              FNV-1a 64 over every preceding byte
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::models::{Architecture, Model, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LTCK";
pub const VERSION: u16 = 1;

/// Incremental FNV-1a 64-bit hash, the checkpoint integrity checksum.
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (tag, extras): (u8, Vec<u32>) = match &model.spec.arch {
        Architecture::Linear => (0, Vec::new()),
        Architecture::Mlp { hidden } => (1, hidden.iter().map(|&h| h as u32).collect()),
        Architecture::TinyConv { channels } => (2, channels.iter().map(|&c| c as u32).collect()),
    };
    out.push(tag);
    out.extend_from_slice(&(extras.len() as u16).to_le_bytes());
    for e in extras {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out.push(model.spec.input_shape.len() as u8);
    for &d in &model.spec.input_shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.spec.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, tensor) in &model.params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut h = Fnv1a::new();
    h.update(&out);
    out.extend_from_slice(&h.finish().to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.pos, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 8 {
        return Err(Error::format(0, "checkpoint too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let mut h = Fnv1a::new();
    h.update(body);
    if h.finish() != stored {
        return Err(Error::format(
            bytes.len() - 8,
            format!("checksum mismatch: stored {stored:#018x}, computed {:#018x}", h.finish()),
        ));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format(0, "bad magic, not a checkpoint file"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let tag = r.u8()?;
    let n_extras = r.u16()? as usize;
    let mut extras = Vec::with_capacity(n_extras);
    for _ in 0..n_extras {
        extras.push(r.u32()? as usize);
    }
    let arch = match tag {
        0 => Architecture::Linear,
        1 => Architecture::Mlp { hidden: extras },
        2 => {
            if extras.len() != 2 {
                return Err(Error::format(7, "tinyconv needs exactly 2 channel extras"));
            }
            Architecture::TinyConv { channels: [extras[0], extras[1]] }
        }
        other => return Err(Error::format(6, format!("unknown architecture tag {other}"))),
    };
    let in_ndim = r.u8()? as usize;
    let mut input_shape = Vec::with_capacity(in_ndim);
    for _ in 0..in_ndim {
        input_shape.push(r.u32()? as usize);
    }
    let num_classes = r.u32()? as usize;
    let n_params = r.u32()? as usize;

    let mut params = BTreeMap::new();
    for _ in 0..n_params {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::format(r.pos, "parameter name is not UTF-8"))?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::format(r.pos, "trailing bytes after parameter table"));
    }

    let spec = ModelSpec { arch, input_shape, num_classes };
    spec.validate()?;
    Ok(Model { spec, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_model;

    #[test]
    fn roundtrip_preserves_everything() {
        for spec in [
            ModelSpec::linear(3, 2),
            ModelSpec::mlp(4, alloc::vec![8, 5], 3),
            ModelSpec::tiny_conv([1, 10, 10], [2, 3], 4),
        ] {
            let model = init_model(&spec, 99).unwrap();
            let bytes = encode_model(&model);
            let back = decode_model(&bytes).unwrap();
            assert_eq!(model, back);
        }
    }

    #[test]
    fn corrupted_byte_is_detected() {
        let model = init_model(&ModelSpec::linear(3, 2), 1).unwrap();
        let mut bytes = encode_model(&model);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_model(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_is_detected() {
        let model = init_model(&ModelSpec::linear(3, 2), 1).unwrap();
        let bytes = encode_model(&model);
        assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
    }
}
