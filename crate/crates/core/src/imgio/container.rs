//! Versioned little-endian binary container used for model files.
//!
//! Layout: the 8-byte magic, a `u32` format version, then a sequence of
//! tagged sections `[tag: 4 bytes][len: u64][payload]`. Consumers read the
//! sections they know in order.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSRIQM01";

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.put_u32(version);
        w
    }

    /// Writes a tagged section whose payload is produced by `f`.
    pub fn section(&mut self, tag: &[u8; 4], f: impl FnOnce(&mut ByteWriter)) {
        let mut inner = ByteWriter { buf: Vec::new() };
        f(&mut inner);
        self.buf.extend_from_slice(tag);
        self.put_u64(inner.buf.len() as u64);
        self.buf.extend_from_slice(&inner.buf);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_usize(&mut self, v: usize) {
        self.put_u64(v as u64);
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64s(&mut self, v: &[f64]) {
        self.put_usize(v.len());
        for &x in v {
            self.put_f64(x);
        }
    }

    pub fn put_str(&mut self, s: &str) {
        self.put_usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Validates the magic header and returns the reader plus format version.
    pub fn open(buf: &'a [u8]) -> Result<(Self, u32)> {
        if buf.len() < 12 || &buf[..8] != MAGIC {
            return Err(Error::Format("missing HSRIQM01 magic header".into()));
        }
        let mut r = Self { buf, pos: 8 };
        let version = r.get_u32()?;
        Ok((r, version))
    }

    /// Enters the next section, which must carry `tag`.
    pub fn section(&mut self, tag: &[u8; 4]) -> Result<ByteReader<'a>> {
        let found = self.take(4)?;
        if found != tag {
            return Err(Error::Format(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = self.get_usize()?;
        let payload = self.take(len)?;
        Ok(ByteReader {
            buf: payload,
            pos: 0,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated model container".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_usize(&mut self) -> Result<usize> {
        usize::try_from(self.get_u64()?).map_err(|_| Error::Format("length overflow".into()))
    }

    pub fn get_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn get_f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.get_usize()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Format("truncated f64 array".into()));
        }
        (0..n).map(|_| self.get_f64()).collect()
    }

    pub fn get_str(&mut self) -> Result<String> {
        let n = self.get_usize()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }
}
