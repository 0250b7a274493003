//! Binary PGM (P5, maxval 255) raster I/O.
//!
//! One byte per pixel, row-major from the top-left. The ASCII header is
//! `P5`, width, height, maxval, separated by whitespace; `#` starts a
//! comment running to end of line. Exactly one whitespace byte separates the
//! maxval from the pixel payload. Only maxval 255 is accepted.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::BinaryMask;
use crate::tensor::Tensor;

/// Quantizes a unit-interval value to a byte, rounding half up.
pub fn gray_from_unit(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::Pgm { path: path.to_path_buf(), detail: detail.into() }
}

pub fn write_pgm(path: &Path, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), h * w, "pixel buffer does not match {h}x{w}");
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> &[u8] {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|&c| !c.is_ascii_whitespace() && c != b'#') {
            self.pos += 1;
        }
        &self.bytes[start..self.pos]
    }

    fn number(&mut self, path: &Path, what: &str) -> Result<usize> {
        let tok = self.token();
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(path, format!("bad {what} field {:?}", String::from_utf8_lossy(tok))))
    }
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hd = Header { bytes: &bytes, pos: 0 };
    if hd.token() != b"P5" {
        return Err(bad(path, "not a binary pgm (missing P5 magic)"));
    }
    let w = hd.number(path, "width")?;
    let h = hd.number(path, "height")?;
    let maxval = hd.number(path, "maxval")?;
    if h == 0 || w == 0 {
        return Err(bad(path, format!("degenerate size {w}x{h}")));
    }
    if maxval != 255 {
        return Err(bad(path, format!("maxval {maxval} unsupported (need 255)")));
    }
    match bytes.get(hd.pos) {
        Some(c) if c.is_ascii_whitespace() => hd.pos += 1,
        _ => return Err(bad(path, "missing whitespace after maxval")),
    }
    let pixels = &bytes[hd.pos..];
    let need = h * w;
    if pixels.len() != need {
        return Err(bad(path, format!("expected {need} pixel bytes, found {}", pixels.len())));
    }
    Ok((h, w, pixels.to_vec()))
}

/// Writes a unit-interval plane, quantized to 8 bits.
pub fn write_image_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = image.dims2()?;
    let px: Vec<u8> = image.data().iter().map(|&v| gray_from_unit(v)).collect();
    write_pgm(path, h, w, &px)
}

/// Reads a plane back to unit-interval values (byte / 255).
pub fn read_image_pgm(path: &Path) -> Result<Tensor> {
    let (h, w, px) = read_pgm(path)?;
    Tensor::from_vec(&[h, w], px.iter().map(|&b| b as f64 / 255.0).collect())
}

/// Masks are written as {0, 255} so they render in any image viewer.
pub fn write_mask_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    let (h, w) = mask.dims();
    let mut px = vec![0u8; h * w];
    for (y, x) in mask.ones() {
        px[y * w + x] = 255;
    }
    write_pgm(path, h, w, &px)
}

/// Strict inverse of [`write_mask_pgm`]: any byte other than 0/255 is an error.
pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask> {
    let (h, w, px) = read_pgm(path)?;
    let mut mask = BinaryMask::new(h, w);
    for (i, &b) in px.iter().enumerate() {
        match b {
            0 => {}
            255 => mask.set(i / w, i % w, true),
            other => {
                return Err(bad(path, format!("mask byte {other} at offset {i} is neither 0 nor 255")))
            }
        }
    }
    Ok(mask)
}
