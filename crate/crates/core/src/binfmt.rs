//! Little-endian encoding helpers shared by the records file and the index file.
//!
//! Both files share the same envelope: an 8-byte magic, a `u32` format version,
//! a `u32` reserved word, the payload, and a trailing CRC-32 (IEEE) of every
//! preceding byte.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::geo::{BoundingBox, GeoPoint};

pub const HEADER_LEN: usize = 16;
pub const TRAILER_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("format version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut e = Encoder { buf: Vec::new() };
        e.buf.extend_from_slice(magic);
        e.u32(version);
        e.u32(0);
        e
    }

    pub fn with_capacity(magic: &[u8; 8], version: u32, capacity: usize) -> Self {
        let mut e = Encoder { buf: Vec::with_capacity(capacity) };
        e.buf.extend_from_slice(magic);
        e.u32(version);
        e.u32(0);
        e
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bbox(&mut self, b: &BoundingBox) {
        self.f64(b.south_west.lat);
        self.f64(b.south_west.lon);
        self.f64(b.north_east.lat);
        self.f64(b.north_east.lon);
    }

    /// Appends the checksum and returns the finished bytes.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Checks magic, then version, then the checksum, in that order.
    pub fn open(
        bytes: &'a [u8],
        magic: &[u8; 8],
        version: u32,
        what: &'static str,
    ) -> Result<Self, FormatError> {
        if bytes.len() < 8 || &bytes[..8] != magic {
            return Err(FormatError::BadMagic { expected: what });
        }
        if bytes.len() < HEADER_LEN + TRAILER_LEN {
            return Err(FormatError::Corrupt("truncated header".into()));
        }
        let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if found != version {
            return Err(FormatError::VersionMismatch { found, expected: version });
        }
        let body_end = bytes.len() - TRAILER_LEN;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        if crc32fast::hash(&bytes[..body_end]) != stored {
            return Err(FormatError::Corrupt("checksum mismatch".into()));
        }
        Ok(Decoder { buf: &bytes[..body_end], pos: HEADER_LEN })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| FormatError::Corrupt("unexpected end of payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32, FormatError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, FormatError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bbox(&mut self) -> Result<BoundingBox, FormatError> {
        let sw = GeoPoint { lat: self.f64()?, lon: self.f64()? };
        let ne = GeoPoint { lat: self.f64()?, lon: self.f64()? };
        BoundingBox::new(sw, ne).map_err(|e| FormatError::Corrupt(e.to_string()))
    }

    /// Validates that `count` items of `width` bytes fit in what is left, so a
    /// corrupt count cannot trigger a huge allocation.
    pub fn expect_items(&self, count: u64, width: usize) -> Result<usize, FormatError> {
        let n = usize::try_from(count).map_err(|_| FormatError::Corrupt("count overflow".into()))?;
        match n.checked_mul(width) {
            Some(bytes) if bytes <= self.remaining() => Ok(n),
            _ => Err(FormatError::Corrupt(format!("declared {count} items exceed file size"))),
        }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(self) -> Result<(), FormatError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(FormatError::Corrupt(format!("{} trailing bytes", self.remaining())))
        }
    }
}
