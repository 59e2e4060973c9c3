//! Grayscale image container and 8-bit PGM/PPM decoding.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", height * width),
                got: format!("{}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid("image intensities must lie in [0, 1]"));
        }
        Ok(GrayImage {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        GrayImage {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    /// Rec.601 luma reduction of interleaved RGB data in [0, 1].
    pub fn from_rgb(height: usize, width: usize, rgb: &[f64]) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", height * width * 3),
                got: format!("{}", rgb.len()),
            });
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        GrayImage::new(height, width, data)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    /// Replicate-padded lookup for signed indices.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }
}

/// Reads a binary 8-bit PGM (P5) or PPM (P6) file; PPM is reduced to gray.
pub fn read_pnm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let fmt = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));

    let mut pos = 0usize;
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("unexpected end of PNM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    let channels = match magic.as_str() {
        "P5" => 1usize,
        "P6" => 3usize,
        other => return Err(fmt(&format!("unsupported PNM magic {other}"))),
    };
    let width: usize = next_token(&bytes)?.parse().map_err(|_| fmt("bad width"))?;
    let height: usize = next_token(&bytes)?.parse().map_err(|_| fmt("bad height"))?;
    let maxval: usize = next_token(&bytes)?.parse().map_err(|_| fmt("bad maxval"))?;
    if maxval != 255 {
        return Err(fmt("only 8-bit PNM supported"));
    }
    pos += 1; // single whitespace after maxval
    let n = width * height * channels;
    if bytes.len() < pos + n {
        return Err(fmt("truncated PNM data"));
    }
    let raster = &bytes[pos..pos + n];
    if channels == 1 {
        let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
        GrayImage::new(height, width, data)
    } else {
        let rgb: Vec<f64> = raster.iter().map(|&b| b as f64 / 255.0).collect();
        GrayImage::from_rgb(height, width, &rgb)
    }
}
