//! Little-endian, length-prefixed binary encoding shared by every on-disk
//! and on-wire artifact.

use crate::error::{Error, Result};

#[derive(Default, Debug)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i128(&mut self, v: i128) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    /// `u64` length followed by the raw bytes.
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    /// `u64` count followed by each word.
    pub fn u64s(&mut self, v: &[u64]) -> &mut Self {
        self.u64(v.len() as u64);
        self.buf.reserve(v.len() * 8);
        for &x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
        self
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    /// `what` names the artifact in error messages.
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        ByteReader { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "{}: truncated while reading {field} (need {n} bytes at offset {}, have {})",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub fn i64(&mut self, field: &str) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub fn i128(&mut self, field: &str) -> Result<i128> {
        Ok(i128::from_le_bytes(self.take(16, field)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub fn len_prefix(&mut self, field: &str, elem_size: usize) -> Result<usize> {
        let n = self.u64(field)?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(elem_size as u64) > remaining {
            return Err(Error::Format(format!(
                "{}: {field} declares {n} elements but only {remaining} bytes remain",
                self.what
            )));
        }
        Ok(n as usize)
    }

    pub fn bytes(&mut self, field: &str) -> Result<&'a [u8]> {
        let n = self.len_prefix(field, 1)?;
        self.take(n, field)
    }

    pub fn string(&mut self, field: &str) -> Result<String> {
        let b = self.bytes(field)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::Format(format!("{}: {field} is not UTF-8", self.what)))
    }

    pub fn u64s(&mut self, field: &str) -> Result<Vec<u64>> {
        let n = self.len_prefix(field, 8)?;
        let raw = self.take(n * 8, field)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn raw(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        self.take(n, field)
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_names_field() {
        let mut w = ByteWriter::new();
        w.u32(7).u64s(&[1, 2, 3]);
        let buf = w.finish();
        let mut r = ByteReader::new(&buf[..buf.len() - 1], "thing");
        assert_eq!(r.u32("head").unwrap(), 7);
        let err = r.u64s("body").unwrap_err().to_string();
        assert!(err.contains("body"), "{err}");
    }

    #[test]
    fn roundtrip() {
        let mut w = ByteWriter::new();
        w.u8(1).i64(-5).f64(0.25).str("hi").bytes(&[9, 8]);
        let buf = w.finish();
        let mut r = ByteReader::new(&buf, "t");
        assert_eq!(r.u8("a").unwrap(), 1);
        assert_eq!(r.i64("b").unwrap(), -5);
        assert_eq!(r.f64("c").unwrap(), 0.25);
        assert_eq!(r.string("d").unwrap(), "hi");
        assert_eq!(r.bytes("e").unwrap(), &[9, 8]);
        r.expect_end().unwrap();
    }
}
