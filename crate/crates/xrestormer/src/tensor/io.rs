//! Tensor serialization: a small little-endian binary format used by
//! checkpoints.
//!
//! Layout: magic `XRTN`, dtype tag (u8: 0 = f32, 1 = f64), rank (u32 LE),
//! one u64 LE extent per axis, then the elements in row-major order,
//! little-endian.

use super::{Dtype, Scalar, Tensor};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"XRTN";

/// A tensor of either supported dtype, as read from a file.
#[derive(Debug, Clone)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            AnyTensor::F32(_) => Dtype::F32,
            AnyTensor::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to the requested element type (casting if widths differ).
    pub fn into_tensor<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn write_tensor<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[T::DTYPE.tag()])?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * T::width());
    for &x in t.data() {
        buf.extend_from_slice(&x.to_le_bytes_vec());
    }
    w.write_all(&buf)
}

/// Reads a tensor whose dtype may differ from the requested one; the caller
/// decides whether a cast is acceptable via [`AnyTensor::into_tensor`].
pub fn read_any_tensor(r: &mut impl Read) -> Result<AnyTensor> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse(format!("bad tensor magic {magic:?}")));
    }
    let mut tag = [0u8; 1];
    read_exact(r, &mut tag)?;
    let dtype = Dtype::from_tag(tag[0])?;
    let mut rank_buf = [0u8; 4];
    read_exact(r, &mut rank_buf)?;
    let rank = u32::from_le_bytes(rank_buf) as usize;
    if rank > 16 {
        return Err(Error::Parse(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut ext = [0u8; 8];
        read_exact(r, &mut ext)?;
        shape.push(u64::from_le_bytes(ext) as usize);
    }
    let numel: usize = shape.iter().product();
    match dtype {
        Dtype::F32 => Ok(AnyTensor::F32(read_data::<f32>(r, shape, numel)?)),
        Dtype::F64 => Ok(AnyTensor::F64(read_data::<f64>(r, shape, numel)?)),
    }
}

/// Reads a tensor and requires its stored dtype to match `T` exactly.
pub fn read_tensor<T: Scalar>(r: &mut impl Read) -> Result<Tensor<T>> {
    let any = read_any_tensor(r)?;
    if any.dtype() != T::DTYPE {
        return Err(Error::Parse(format!(
            "tensor dtype {:?} does not match requested {:?}",
            any.dtype(),
            T::DTYPE
        )));
    }
    Ok(any.into_tensor())
}

fn read_data<T: Scalar>(r: &mut impl Read, shape: Vec<usize>, numel: usize) -> Result<Tensor<T>> {
    let width = T::width();
    let mut buf = vec![0u8; numel * width];
    read_exact(r, &mut buf)?;
    let data: Vec<T> = buf.chunks_exact(width).map(T::from_le_slice).collect();
    Tensor::new(shape, data)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Parse(format!("truncated tensor data: {e}")))
}

pub fn save_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensor(&mut f, t).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<AnyTensor> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_any_tensor(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_f32_and_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t32: Tensor<f32> = uniform(&[3, 4, 2], -5.0, 5.0, &mut rng);
        let t64: Tensor<f64> = uniform(&[7], -5.0, 5.0, &mut rng);

        let mut buf = Vec::new();
        write_tensor(&mut buf, &t32).unwrap();
        let back = read_tensor::<f32>(&mut buf.as_slice()).unwrap();
        assert!(t32.bits_eq(&back));

        let mut buf64 = Vec::new();
        write_tensor(&mut buf64, &t64).unwrap();
        let back64 = read_tensor::<f64>(&mut buf64.as_slice()).unwrap();
        assert!(t64.bits_eq(&back64));
    }

    #[test]
    fn round_trip_rank0() {
        let s = Tensor::<f64>::scalar(-3.25);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &s).unwrap();
        let back = read_tensor::<f64>(&mut buf.as_slice()).unwrap();
        assert!(s.bits_eq(&back));
    }

    #[test]
    fn dtype_mismatch_is_an_error() {
        let t = Tensor::<f32>::zeros(&[2]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert!(read_tensor::<f64>(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn bad_magic_is_an_error() {
        let buf = b"NOPE\x00\x01\x00\x00\x00".to_vec();
        assert!(read_any_tensor(&mut buf.as_slice()).is_err());
    }
}
