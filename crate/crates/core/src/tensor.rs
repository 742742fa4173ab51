//! The `TNSR` raw tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | field   | type            |
//! |---------|-----------------|
//! | magic   | `b"TNSR"`       |
//! | version | `u32` (= 1)     |
//! | ndim    | `u32`           |
//! | dims    | `u32 × ndim`    |
//! | payload | `f64 × Π dims`, row-major |
//!
//! Images are stored channel-last as `[height, width, channels]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Image;

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_image(img: &Image) -> Self {
        Tensor {
            dims: vec![img.height(), img.width(), img.channels()],
            data: img.data().to_vec(),
        }
    }

    /// Accepts `[h, w, c]` or `[h, w]` (single channel).
    pub fn into_image(self) -> Result<Image> {
        match self.dims[..] {
            [h, w, c] => Image::from_vec(w, h, c, self.data),
            [h, w] => Image::from_vec(w, h, 1, self.data),
            _ => Err(Error::Shape(format!(
                "tensor with dims {:?} is not an image",
                self.dims
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 8 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        put_u32(&mut out, TENSOR_VERSION);
        put_u32(&mut out, self.dims.len() as u32);
        for &d in &self.dims {
            put_u32(&mut out, d as u32);
        }
        put_f64s(&mut out, &self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != TENSOR_MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != TENSOR_VERSION {
            return Err(Error::Format(format!("unsupported tensor version {version}")));
        }
        let ndim = r.u32("ndim")? as usize;
        let dims = (0..ndim)
            .map(|i| r.u32(&format!("dims[{i}]")).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let data = r.f64s(count, "payload")?;
        if !r.is_empty() {
            return Err(Error::Format(format!(
                "{} trailing bytes after tensor payload",
                r.remaining()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a little-endian byte buffer with field-named errors.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub(crate) fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated while reading {field}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, field: &str) -> Result<u16> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f64s(&mut self, count: usize, field: &str) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| Error::Format(format!("{field}: element count overflow")))?;
        let b = self.take(bytes, field)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
