//! FMAP binary tensor container.
//!
//! Layout: magic `FMAP`, then four little-endian u32 fields
//! `[version = 1, rows, cols, channels]`, then `rows * cols * channels`
//! IEEE-754 f32 values, little-endian, row-major, channel-last.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const VERSION: u32 = 1;

/// Dense tensor as stored in an FMAP file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    /// Row-major, channel-last: index = (r * cols + c) * channels + ch.
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", rows * cols * channels),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Tensor {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize, ch: usize) -> f32 {
        self.data[(r * self.cols + c) * self.channels + ch]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize, ch: usize) -> &mut f32 {
        &mut self.data[(r * self.cols + c) * self.channels + ch]
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        for v in [VERSION, self.rows as u32, self.cols as u32, self.channels as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("{}: bad FMAP magic", path.display())));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported FMAP version {version}",
                path.display()
            )));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let channels = read_u32(&mut r)? as usize;
        let n = rows * cols * channels;
        let mut data = Vec::with_capacity(n);
        let mut fbuf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut fbuf)?;
            let v = f32::from_le_bytes(fbuf);
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "{}: non-finite value in FMAP data",
                    path.display()
                )));
            }
            data.push(v);
        }
        Tensor::new(rows, cols, channels, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fmap");
        let t = Tensor::new(3, 4, 2, (0..24).map(|i| i as f32 * 0.37 - 1.0).collect()).unwrap();
        t.write(&path).unwrap();
        let back = Tensor::read(&path).unwrap();
        assert_eq!(t, back);
        for (a, b) in t.data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fmap");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(Tensor::read(&path).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.fmap");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        for v in [1u32, 1, 1, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(Tensor::read(&path).is_err());
    }
}
