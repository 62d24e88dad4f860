//! Dense tensors and the `.gst` interchange container.
//!
//! Layout of a `.gst` file:
//!
//! ```text
//! bytes 0..4      b"GSAL"
//! bytes 4..8      header length L, u32 little-endian
//! bytes 8..8+L    UTF-8 JSON {"dtype":"f32","order":"row-major","shape":[...]}
//! bytes 8+L..     payload, little-endian, row-major
//! ```
//!
//! The writer always emits the compact header with keys in the order shown,
//! so any file produced by [`save_tensor`] round-trips byte for byte. Masks
//! use the same container with `"dtype":"u8"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GSAL";

/// Row-major `f32` array with a validated shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = checked_numel(&shape)?;
        if expected != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = checked_numel(&shape)?;
        Ok(Tensor {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Returns the same values under a new shape with equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        if checked_numel(&shape)? != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Serializes into the interchange byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        encode_container(Dtype::F32, &self.shape, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = decode_container(bytes)?;
        if header.dtype != "f32" {
            return Err(Error::UnsupportedDtype(header.dtype));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(header.shape, data)
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::ShapeMismatch(format!(
            "shape {shape:?} must be a nonempty list of positive integers"
        )));
    }
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows")))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }

    fn width(name: &str) -> Option<usize> {
        match name {
            "f32" => Some(4),
            "u8" => Some(1),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    order: String,
    shape: Vec<usize>,
}

fn encode_container(dtype: Dtype, shape: &[usize], payload: &[u8]) -> Vec<u8> {
    let header = Header {
        dtype: dtype.name().to_string(),
        order: "row-major".to_string(),
        shape: shape.to_vec(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    out
}

fn decode_container(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let end = 8usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::BadHeader(format!("header length {len} exceeds file")))?;
    let header: Header = serde_json::from_slice(&bytes[8..end])
        .map_err(|e| Error::BadHeader(e.to_string()))?;
    if header.order != "row-major" {
        return Err(Error::BadHeader(format!("unsupported order {:?}", header.order)));
    }
    let width =
        Dtype::width(&header.dtype).ok_or_else(|| Error::UnsupportedDtype(header.dtype.clone()))?;
    let numel = checked_numel(&header.shape)?;
    let payload = &bytes[end..];
    if payload.len() != numel * width {
        return Err(Error::ShapeMismatch(format!(
            "header shape {:?} needs {} payload bytes, found {}",
            header.shape,
            numel * width,
            payload.len()
        )));
    }
    Ok((header, payload))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Decodes a mask container as a boolean grid plus its shape.
///
/// Both `u8` and `f32` payloads are accepted; a pixel is set when its value
/// exceeds 0.5, so blurred-edge float masks threshold cleanly.
pub fn decode_mask(bytes: &[u8]) -> Result<(Vec<usize>, Vec<bool>)> {
    let (header, payload) = decode_container(bytes)?;
    let bits = match header.dtype.as_str() {
        "u8" => payload.iter().map(|&b| b as f32 > 0.5).collect(),
        "f32" => {
            let t = Tensor::from_bytes(bytes)?;
            t.data.iter().map(|&v| v > 0.5).collect()
        }
        other => return Err(Error::UnsupportedDtype(other.to_string())),
    };
    Ok((header.shape, bits))
}

pub fn encode_mask(shape: &[usize], bits: &[bool]) -> Vec<u8> {
    let payload: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
    encode_container(Dtype::U8, shape, &payload)
}
