//! Binary tensor dump: `b"T4D1"`, four little-endian `u32` dims `(N, C, H, W)`,
//! one dtype byte (4 = f32, 8 = f64), then the flat little-endian buffer.

use std::fs;
use std::path::Path;

use super::{Dims, Tensor4};
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"T4D1";
const HEADER_LEN: usize = 4 + 4 * 4 + 1;

pub fn encode<T: Scalar>(t: &Tensor4<T>) -> Vec<u8> {
    let d = t.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + d.len() * T::DTYPE.code() as usize);
    out.extend_from_slice(MAGIC);
    for v in [d.n, d.c, d.h, d.w] {
        let v = u32::try_from(v).expect("dimension fits in u32");
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(T::DTYPE.code());
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Reads the header only.
pub fn header(bytes: &[u8]) -> Result<(Dims, DType)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let dim = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let dims = Dims::new(dim(0), dim(1), dim(2), dim(3));
    let dtype = DType::from_code(bytes[HEADER_LEN - 1])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[HEADER_LEN - 1])))?;
    Ok((dims, dtype))
}

/// Decodes a dump, converting elements to `T` when the stored dtype differs.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor4<T>> {
    let (dims, dtype) = header(bytes)?;
    let width = dtype.code() as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != dims.len() * width {
        return Err(Error::Format(format!(
            "payload of {} bytes does not match {dims} x {width}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(width)
        .map(|b| match dtype {
            DType::F32 if T::DTYPE == DType::F32 => T::read_le(b),
            DType::F64 if T::DTYPE == DType::F64 => T::read_le(b),
            DType::F32 => T::of(f32::read_le(b) as f64),
            DType::F64 => T::of(f64::read_le(b)),
        })
        .collect();
    Tensor4::from_vec(dims, data)
}

pub fn write_file<T: Scalar>(path: impl AsRef<Path>, t: &Tensor4<T>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn read_file<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor4<T>> {
    decode(&fs::read(path)?)
}
