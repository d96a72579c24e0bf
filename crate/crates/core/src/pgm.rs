//! Binary portable graymap (P5) reading and writing, 8-bit only.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Largest accepted image, in pixels.
pub const MAX_PIXELS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub pixels: Vec<u8>,
    pub comments: Vec<String>,
}

impl Graymap {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 64);
        out.extend_from_slice(b"P5\n");
        for c in &self.comments {
            out.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        out.extend_from_slice(
            format!("{} {}\n{}\n", self.width, self.height, self.maxval).as_bytes(),
        );
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::MaskFormat(msg.to_string());
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(bad("missing P5 magic number"));
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        let mut comments = Vec::new();
        for field in fields.iter_mut() {
            // whitespace and comments
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        let start = pos + 1;
                        while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                            pos += 1;
                        }
                        comments.push(
                            String::from_utf8_lossy(&bytes[start..pos])
                                .trim()
                                .to_string(),
                        );
                    }
                    Some(_) => break,
                    None => return Err(bad("truncated header")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                return Err(bad("expected a decimal header field"));
            }
            let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?;
            *field = text
                .parse()
                .map_err(|_| Error::MaskFormat(format!("header field `{text}` overflows")))?;
        }
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(bad("missing whitespace after maxval")),
        }
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err(bad("zero image dimension"));
        }
        let count = width
            .checked_mul(height)
            .filter(|n| *n <= MAX_PIXELS)
            .ok_or_else(|| Error::MaskFormat(format!("dimensions {width}x{height} too large")))?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::MaskFormat(format!(
                "maxval {maxval} unsupported; only 8-bit graymaps are read"
            )));
        }
        let data = &bytes[pos..];
        if data.len() < count {
            return Err(Error::MaskFormat(format!(
                "expected {count} pixels, found {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            maxval: maxval as u8,
            pixels: data[..count].to_vec(),
            comments,
        })
    }
}

/// Linearly maps `values` (row-major) onto 0..=255 and returns the image
/// together with the `(min, max)` used for the scaling.
pub fn heatmap(values: &[f64], width: usize, height: usize) -> (Graymap, f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let pixels = values
        .iter()
        .map(|v| {
            if span > 0.0 {
                ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    let map = Graymap {
        width,
        height,
        maxval: 255,
        pixels,
        comments: vec![format!("min={min:.9e} max={max:.9e}")],
    };
    (map, min, max)
}
