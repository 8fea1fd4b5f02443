//! SKT1 tensor container.
//!
//! Layout (little-endian): 8-byte magic `SKTENS01`, `u32` rank, `rank` x `u32`
//! extents, `u8` dtype code (0 = f32, 1 = f64), then the row-major payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"SKTENS01";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A tensor read from disk whose precision is only known at runtime.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn into_precision<T: Scalar>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn write_tensor_to<T: Scalar, W: Write>(tensor: &Tensor<T>, out: &mut W) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * tensor.shape().len() + tensor.len() * 8);
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for &extent in tensor.shape() {
        buf.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    buf.push(T::DTYPE.code());
    for &v in tensor.as_slice() {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn write_tensor<T: Scalar>(tensor: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_tensor_to(tensor, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Byte cursor that reports the offset of the first unreadable field.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn read_payload<T: Scalar>(cur: &mut Cursor<'_>, shape: &[usize]) -> Result<Tensor<T>> {
    let count: usize = shape.iter().product();
    let width = T::DTYPE.width();
    let raw = cur.take(count * width, "tensor payload")?;
    let data = raw.chunks_exact(width).map(T::read_le).collect();
    Tensor::from_vec(shape, data)
}

pub fn read_tensor_from<R: Read>(input: &mut R) -> Result<AnyTensor> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(&bytes);
    let magic = cur.take(8, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic, expected SKTENS01".into() });
    }
    let rank = cur.u32("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = cur.offset();
        let extent = cur.u32("extent")? as usize;
        if extent == 0 {
            return Err(Error::Format { offset: at, msg: "zero extent".into() });
        }
        shape.push(extent);
    }
    let at = cur.offset();
    let code = cur.u8("dtype")?;
    let tensor = match DType::from_code(code) {
        Some(DType::F32) => AnyTensor::F32(read_payload(&mut cur, &shape)?),
        Some(DType::F64) => AnyTensor::F64(read_payload(&mut cur, &shape)?),
        None => {
            return Err(Error::Format { offset: at, msg: format!("unknown dtype code {code}") })
        }
    };
    if cur.remaining() != 0 {
        return Err(Error::Format {
            offset: cur.offset(),
            msg: format!("{} trailing bytes", cur.remaining()),
        });
    }
    Ok(tensor)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    read_tensor_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::<f32>::from_vec(&[2, 1], vec![1.0, -0.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&t, &mut buf).unwrap();
        let mut expected = b"SKTENS01".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(0);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn f64_round_trip() {
        let t = Tensor::<f64>::from_vec(&[3], vec![1e-300, -7.25, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&t, &mut buf).unwrap();
        assert_eq!(read_tensor_from(&mut buf.as_slice()).unwrap(), AnyTensor::F64(t));
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::<f32>::from_vec(&[4], vec![0.0; 4]).unwrap();
        let mut buf = Vec::new();
        write_tensor_to(&t, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        match read_tensor_from(&mut buf.as_slice()) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 17),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOTATENSOR000000".to_vec();
        assert!(matches!(read_tensor_from(&mut buf.as_slice()), Err(Error::Format { offset: 0, .. })));
    }
}
