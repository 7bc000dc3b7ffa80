//! `WDGT1` binary tensor records.
//!
//! Layout: magic `WDGT1`, `u8` dtype code (0 = f32, 1 = f64), `u8` rank,
//! `rank` little-endian `u32` extents, then the raw little-endian values.

use std::io::{Read, Write};

use thiserror::Error;

use super::{numel, DType, Tensor};

pub const TENSOR_MAGIC: &[u8; 5] = b"WDGT1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("bad magic at byte {offset}: expected {expected:?}")]
    BadMagic { offset: u64, expected: String },
    #[error("unknown dtype code {code} at byte {offset}")]
    BadDType { offset: u64, code: u8 },
    #[error("truncated record at byte {offset}: expected {expected} more bytes, found {actual}")]
    Truncated { offset: u64, expected: u64, actual: u64 },
    #[error("invalid extents {extents:?} at byte {offset}")]
    BadExtents { offset: u64, extents: Vec<u32> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A reader that tracks its byte offset for error reporting.
pub struct CountingReader<R> {
    inner: R,
    pub offset: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    /// Fills `buf` or reports how many bytes were actually available.
    pub fn read_exact_counted(&mut self, buf: &mut [u8]) -> Result<(), SnapshotError> {
        let start = self.offset;
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(SnapshotError::Truncated {
                        offset: start,
                        expected: buf.len() as u64,
                        actual: got as u64,
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += got as u64;
        Ok(())
    }

    pub fn read_u8(&mut self) -> Result<u8, SnapshotError> {
        let mut b = [0u8; 1];
        self.read_exact_counted(&mut b)?;
        Ok(b[0])
    }

    pub fn read_u32(&mut self) -> Result<u32, SnapshotError> {
        let mut b = [0u8; 4];
        self.read_exact_counted(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<(), SnapshotError> {
        let offset = self.offset;
        let mut b = vec![0u8; magic.len()];
        self.read_exact_counted(&mut b)?;
        if b != magic {
            return Err(SnapshotError::BadMagic {
                offset,
                expected: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        Ok(())
    }

    /// Reads `len` bytes, growing the buffer as data arrives so a corrupt
    /// length field cannot force a huge allocation.
    pub fn read_bytes(&mut self, len: usize) -> Result<Vec<u8>, SnapshotError> {
        let mut b = Vec::new();
        let got = Read::by_ref(&mut self.inner).take(len as u64).read_to_end(&mut b)?;
        if got < len {
            return Err(SnapshotError::Truncated {
                offset: self.offset,
                expected: len as u64,
                actual: got as u64,
            });
        }
        self.offset += got as u64;
        Ok(b)
    }
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[t.dtype().code(), t.rank() as u8])?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    match t.dtype() {
        DType::F32 => {
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut CountingReader<R>) -> Result<Tensor, SnapshotError> {
    r.expect_magic(TENSOR_MAGIC)?;
    let code_at = r.offset;
    let code = r.read_u8()?;
    let dtype = DType::from_code(code).ok_or(SnapshotError::BadDType { offset: code_at, code })?;
    let rank = r.read_u8()? as usize;
    let ext_at = r.offset;
    let mut extents = Vec::with_capacity(rank);
    for _ in 0..rank {
        extents.push(r.read_u32()?);
    }
    let shape: Vec<usize> = extents.iter().map(|&e| e as usize).collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|_| !shape.contains(&0));
    let Some(count) = count else {
        return Err(SnapshotError::BadExtents { offset: ext_at, extents });
    };
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let bytes = count.checked_mul(width).ok_or(SnapshotError::BadExtents {
        offset: ext_at,
        extents: extents.clone(),
    })?;
    let raw = r.read_bytes(bytes)?;
    let data: Vec<f64> = match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    debug_assert_eq!(data.len(), numel(&shape));
    Tensor::with_dtype(data, &shape, dtype)
        .map_err(|_| SnapshotError::BadExtents { offset: ext_at, extents })
}
