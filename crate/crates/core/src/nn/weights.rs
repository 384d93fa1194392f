//! Weight file format.
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! magic      4 bytes   "CXRW"
//! version    u32       1
//! spec_len   u64       byte length of the JSON model spec
//! spec       spec_len  ModelSpec as UTF-8 JSON
//! layers     u32       number of layer entries
//! per layer:
//!   trainable  u8      0 or 1
//!   tensors    u32
//!   per tensor:
//!     rank     u32
//!     extents  rank × u64
//!     values   (product of extents) × f64
//! ```

use std::fs;
use std::path::Path;

use super::{LayerParams, ModelParams, ModelSpec, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CXRW";
pub const VERSION: u32 = 1;

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {} (wanted {n} more)", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub(crate) fn put_params(buf: &mut Vec<u8>, params: &ModelParams) {
    put_u32(buf, params.layers.len() as u32);
    for layer in &params.layers {
        buf.push(layer.trainable as u8);
        put_u32(buf, layer.tensors.len() as u32);
        for t in &layer.tensors {
            put_u32(buf, t.shape().len() as u32);
            for &d in t.shape() {
                put_u64(buf, d as u64);
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

pub(crate) fn read_params(r: &mut Reader<'_>) -> std::result::Result<ModelParams, String> {
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(4096));
    for _ in 0..n_layers {
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(format!("bad trainable flag {b}")),
        };
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors.min(16));
        for _ in 0..n_tensors {
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or("tensor size overflows")?;
            let raw = r.take(count.checked_mul(8).ok_or("tensor size overflows")?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::new(shape, data).map_err(|e| e.to_string())?);
        }
        layers.push(LayerParams { tensors, trainable });
    }
    Ok(ModelParams { layers })
}

pub fn encode_weights(spec: &ModelSpec, params: &ModelParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    let json = serde_json::to_vec(spec).expect("spec serializes");
    put_u64(&mut buf, json.len() as u64);
    buf.extend_from_slice(&json);
    put_params(&mut buf, params);
    buf
}

pub fn decode_weights(bytes: &[u8]) -> std::result::Result<(ModelSpec, ModelParams), String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err("not a weight file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported weight file version {version}"));
    }
    let len = r.u64()? as usize;
    let spec: ModelSpec =
        serde_json::from_slice(r.take(len)?).map_err(|e| format!("bad model spec: {e}"))?;
    spec.validate().map_err(|e| e.to_string())?;
    let params = read_params(&mut r)?;
    if !r.finished() {
        return Err("trailing bytes after parameters".into());
    }
    params.check_matches(&spec).map_err(|e| e.to_string())?;
    Ok((spec, params))
}

pub fn save_weights(path: impl AsRef<Path>, spec: &ModelSpec, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(spec, params)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(ModelSpec, ModelParams)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes).map_err(|m| Error::format(path, m))
}
