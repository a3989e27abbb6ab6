//! `ROSEW` weights files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "ROSEW" 0x01
//! u32 tensor count
//! per tensor: u16 name length, UTF-8 name, u8 ndim, ndim × u32 dims,
//!             dims-product × f32 values (row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::NetworkWeights;
use crate::net::NetworkConfig;
use crate::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 5] = b"ROSEW";
pub const WEIGHTS_VERSION: u8 = 1;

/// Serializes the weights into the `ROSEW` byte layout.
pub fn write_weights<W: Write>(weights: &NetworkWeights<f32>, mut out: W) -> std::io::Result<()> {
    let tensors = weights.tensors();
    let mut buf = Vec::with_capacity(16 + 4 * weights.num_params());
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.push(WEIGHTS_VERSION);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(t.dims.len() as u8);
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
}

pub fn save_weights(weights: &NetworkWeights<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_weights(weights, &mut bytes).map_err(|e| Error::io(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, tensor: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated { tensor: tensor.to_string() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, tensor: &str) -> Result<u8> {
        Ok(self.take(1, tensor)?[0])
    }

    fn u16(&mut self, tensor: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, tensor)?.try_into().unwrap()))
    }

    fn u32(&mut self, tensor: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, tensor)?.try_into().unwrap()))
    }
}

fn check_header(bytes: &[u8]) -> Result<Cursor<'_>> {
    if bytes.len() < WEIGHTS_MAGIC.len() || &bytes[..WEIGHTS_MAGIC.len()] != WEIGHTS_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut cur = Cursor { bytes, pos: WEIGHTS_MAGIC.len() };
    let version = cur.u8("header")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: WEIGHTS_VERSION });
    }
    Ok(cur)
}

/// Recovers the extractor widths and attention kernel size from the tensor
/// dims stored in a `ROSEW` image. Everything the dims cannot express (the
/// pooling source, the activation) keeps its default.
pub fn infer_config(bytes: &[u8]) -> Result<NetworkConfig> {
    let mut cur = check_header(bytes)?;
    let count = cur.u32("header")? as usize;
    let mut config = NetworkConfig { feature_widths: Vec::new(), ..NetworkConfig::default() };
    for i in 0..count {
        let label = format!("tensor #{i}");
        let name_len = cur.u16(&label)? as usize;
        let name = String::from_utf8_lossy(cur.take(name_len, &label)?).into_owned();
        let ndim = cur.u8(&name)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32(&name)? as usize);
        }
        let len: usize = dims.iter().product();
        cur.take(4 * len, &name)?;
        if dims.len() != 4 || !name.ends_with(".weight") {
            continue;
        }
        if name == "feature.1.weight" {
            config.input_channels = dims[1];
        }
        if name.starts_with("feature.") {
            config.feature_widths.push(dims[0]);
        } else if name == "core_attention.1.weight" {
            config.attention_kernel = dims[2];
        }
    }
    config.validate().map_err(|e| Error::WeightsMismatch { tensor: "header".into(), detail: e.to_string() })?;
    Ok(config)
}

/// Parses a `ROSEW` image and checks every tensor against `config`.
/// Nothing is returned unless the whole file is valid.
pub fn read_weights(bytes: &[u8], config: &NetworkConfig) -> Result<NetworkWeights<f32>> {
    let mut cur = check_header(bytes)?;
    let mut weights = NetworkWeights::<f32>::zeros(config)?;
    let expected: Vec<(String, Vec<usize>)> = weights.tensors().into_iter().map(|t| (t.name, t.dims)).collect();
    let count = cur.u32("header")? as usize;
    if count != expected.len() {
        return Err(Error::WeightsMismatch {
            tensor: "header".into(),
            detail: format!("file holds {count} tensors, network has {}", expected.len()),
        });
    }

    let mut slices = weights.slices_mut();
    for (i, (name, dims)) in expected.iter().enumerate() {
        let label = format!("tensor #{i} ({name})");
        let name_len = cur.u16(&label)? as usize;
        let found = String::from_utf8_lossy(cur.take(name_len, &label)?).into_owned();
        if &found != name {
            return Err(Error::WeightsMismatch {
                tensor: name.clone(),
                detail: format!("found tensor named {found:?} at position {i}"),
            });
        }
        let ndim = cur.u8(name)? as usize;
        let mut file_dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            file_dims.push(cur.u32(name)? as usize);
        }
        if &file_dims != dims {
            return Err(Error::WeightsMismatch {
                tensor: name.clone(),
                detail: format!("dims {file_dims:?}, expected {dims:?}"),
            });
        }
        let dst = &mut slices[i];
        let raw = cur.take(4 * dst.len(), name)?;
        for (v, chunk) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::WeightsMismatch {
            tensor: "trailer".into(),
            detail: format!("{} unexpected bytes after the last tensor", bytes.len() - cur.pos),
        });
    }
    drop(slices);
    Ok(weights)
}

pub fn load_weights(path: impl AsRef<Path>, config: &NetworkConfig) -> Result<NetworkWeights<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes, config)
}

/// Loads a weights file whose network shape is taken from the file itself.
pub fn load_weights_inferred(path: impl AsRef<Path>) -> Result<NetworkWeights<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let config = infer_config(&bytes)?;
    read_weights(&bytes, &config)
}
