//! Little-endian byte cursor used by every binary format in the crate.

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4).map_err(|_| FormatError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: self.buf[..self.buf.len().min(4)].to_vec(),
        })?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    /// Fails with a truncation error before allocating when the remaining
    /// payload cannot hold `count` elements of `width` bytes.
    pub fn ensure(&self, count: usize, width: usize) -> Result<(), FormatError> {
        let available = self.buf.len() - self.pos;
        let needed = count.saturating_mul(width);
        if needed > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed,
                available,
            });
        }
        Ok(())
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        self.ensure(count, 4)?;
        let bytes = self.take(count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn i32s(&mut self, count: usize) -> Result<Vec<i32>, FormatError> {
        self.ensure(count, 4)?;
        let bytes = self.take(count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }

    pub fn f64s(&mut self, count: usize) -> Result<Vec<f64>, FormatError> {
        self.ensure(count, 8)?;
        let bytes = self.take(count * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn finish(&self) -> Result<(), FormatError> {
        let extra = self.buf.len() - self.pos;
        if extra > 0 {
            return Err(FormatError::Trailing {
                offset: self.pos,
                extra,
            });
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub(crate) fn dim_u32(what: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Data(format!("{what} = {v} does not fit in u32")))
}
