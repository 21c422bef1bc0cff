//! In-memory image buffers and the binary Netpbm formats the toolchain
//! writes: PPM (P6) for color frames and 16-bit PGM (P5) for instance
//! buffer dumps. Both are written byte-deterministically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad {format} header: {reason}")]
    BadHeader { format: &'static str, reason: String },
    #[error("pixel payload truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("instance id {0} does not fit a 16-bit PGM sample")]
    IdOverflow(u32),
}

/// Packed 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![fill; (width * height) as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, px: [u8; 3]) {
        self.data[(y * self.width + x) as usize] = px;
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.data
    }

    /// Luma conversion used everywhere a gray image is needed.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .iter()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), ImageError> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        for px in &self.data {
            w.write_all(px)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::decode_ppm(&bytes)
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut cur = 0usize;
        let magic = read_token(bytes, &mut cur);
        if magic != b"P6" {
            return Err(ImageError::BadHeader {
                format: "PPM",
                reason: "missing P6 magic".into(),
            });
        }
        let (w, h, maxval) = read_dims(bytes, &mut cur, "PPM")?;
        if maxval != 255 {
            return Err(ImageError::BadHeader {
                format: "PPM",
                reason: format!("unsupported maxval {maxval}"),
            });
        }
        let expected = (w * h) as usize * 3;
        let payload = &bytes[cur..];
        if payload.len() < expected {
            return Err(ImageError::Truncated {
                expected,
                got: payload.len(),
            });
        }
        let data = payload[..expected]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }
}

/// Floating-point grayscale image (values nominally 0..255).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; (width * height) as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Bilinear resize. Sample positions map pixel centers to pixel centers.
    pub fn resize(&self, new_width: u32, new_height: u32) -> GrayImage {
        assert!(new_width > 0 && new_height > 0);
        let mut out = GrayImage::new(new_width, new_height, 0.0);
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        for y in 0..new_height {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            let y0 = src_y.floor().clamp(0.0, (self.height - 1) as f64);
            let y1 = (y0 + 1.0).min((self.height - 1) as f64);
            let fy = (src_y - y0).clamp(0.0, 1.0);
            for x in 0..new_width {
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                let x0 = src_x.floor().clamp(0.0, (self.width - 1) as f64);
                let x1 = (x0 + 1.0).min((self.width - 1) as f64);
                let fx = (src_x - x0).clamp(0.0, 1.0);
                let (x0, x1, y0u, y1u) = (x0 as u32, x1 as u32, y0 as u32, y1 as u32);
                let top = self.get(x0, y0u) * (1.0 - fx) + self.get(x1, y0u) * fx;
                let bot = self.get(x0, y1u) * (1.0 - fx) + self.get(x1, y1u) * fx;
                out.set(x, y, top * (1.0 - fy) + bot * fy);
            }
        }
        out
    }

    /// Crop with border replication for out-of-range coordinates.
    pub fn crop_replicated(&self, x1: i64, y1: i64, w: u32, h: u32) -> GrayImage {
        let mut out = GrayImage::new(w, h, 0.0);
        for y in 0..h {
            let sy = (y1 + y as i64).clamp(0, self.height as i64 - 1) as u32;
            for x in 0..w {
                let sx = (x1 + x as i64).clamp(0, self.width as i64 - 1) as u32;
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }
}

/// Write an instance-id buffer as 16-bit big-endian PGM (P5).
pub fn write_pgm16(path: &Path, width: u32, height: u32, ids: &[u32]) -> Result<(), ImageError> {
    assert_eq!(ids.len(), (width * height) as usize);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n65535\n", width, height)?;
    for &id in ids {
        if id > u16::MAX as u32 {
            return Err(ImageError::IdOverflow(id));
        }
        w.write_all(&(id as u16).to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pgm16(path: &Path) -> Result<(u32, u32, Vec<u32>), ImageError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut cur = 0usize;
    if read_token(&bytes, &mut cur) != b"P5" {
        return Err(ImageError::BadHeader {
            format: "PGM",
            reason: "missing P5 magic".into(),
        });
    }
    let (w, h, maxval) = read_dims(&bytes, &mut cur, "PGM")?;
    if maxval != 65535 {
        return Err(ImageError::BadHeader {
            format: "PGM",
            reason: format!("unsupported maxval {maxval}"),
        });
    }
    let expected = (w * h) as usize * 2;
    let payload = &bytes[cur..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let ids = payload[..expected]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
        .collect();
    Ok((w, h, ids))
}

fn read_token<'a>(bytes: &'a [u8], cur: &mut usize) -> &'a [u8] {
    while *cur < bytes.len() && bytes[*cur].is_ascii_whitespace() {
        *cur += 1;
    }
    let start = *cur;
    while *cur < bytes.len() && !bytes[*cur].is_ascii_whitespace() {
        *cur += 1;
    }
    &bytes[start..*cur]
}

fn read_dims(
    bytes: &[u8],
    cur: &mut usize,
    format: &'static str,
) -> Result<(u32, u32, u32), ImageError> {
    let mut vals = [0u32; 3];
    for v in &mut vals {
        let tok = read_token(bytes, cur);
        *v = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::BadHeader {
                format,
                reason: "non-numeric dimension".into(),
            })?;
    }
    // single whitespace byte separates header from payload
    *cur += 1;
    Ok((vals[0], vals[1], vals[2]))
}
