//! Little-endian binary helpers shared by buffer dumps and tensor files.
//!
//! Tensor file layout:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "ECLT"
//! 4       4           version (u32, = 1)
//! 8       4           ndim (u32)
//! 12      4*ndim      dims (u32 each)
//! ..      4*prod      data (f32 each, row-major)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"ECLT";
pub const TENSOR_VERSION: u32 = 1;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_shape<W: Write>(w: &mut W, shape: &[usize]) -> Result<()> {
    write_u32(w, to_u32(shape.len(), "rank")?)?;
    for &d in shape {
        write_u32(w, to_u32(d, "dimension")?)?;
    }
    Ok(())
}

pub(crate) fn read_shape<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let ndim = read_u32(r)? as usize;
    if ndim > 16 {
        return Err(Error::Format(format!("implausible rank {ndim}")));
    }
    (0..ndim).map(|_| read_u32(r).map(|d| d as usize)).collect()
}

pub(crate) fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4], version: u32) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!("bad magic {m:?}, expected {magic:?}")));
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(Error::Format(format!("unsupported version {v}")));
    }
    Ok(())
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    write_u32(w, TENSOR_VERSION)?;
    write_shape(w, t.shape())?;
    write_f32s(w, t.data())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    check_magic(r, TENSOR_MAGIC, TENSOR_VERSION)?;
    let shape = read_shape(r)?;
    let n = shape.iter().product();
    let data = read_f32s(r, n)?;
    Tensor::new(shape, data)
}
