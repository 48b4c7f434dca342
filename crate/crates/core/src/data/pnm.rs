//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rounds a `[0, 1]` value to its 8-bit code.
#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Snaps every value to the nearest 8-bit level.
pub fn quantize(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| from_u8(to_u8(v)))
}

/// Encodes a `[1, H, W]` tensor as P5 or a `[3, H, W]` tensor as P6.
pub fn encode(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match img.shape() {
        [c @ (1 | 3), h, w] => (*c, *h, *w),
        s => return Err(Error::Config(format!("PNM needs a [1|3, H, W] image, got {s:?}"))),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = img.data();
    out.reserve(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            out.push(to_u8(d[ch * plane + i]));
        }
    }
    Ok(out)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("PNM header: bad {what}")))
    }
}

/// Decodes P5/P6 into `[1|3, H, W]` with values scaled to `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let c = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Parse("not a binary PGM/PPM (expected P5 or P6 magic)".into())),
    };
    let mut hd = Header { bytes, pos: 2 };
    let w = hd.number("width")?;
    let h = hd.number("height")?;
    let maxval = hd.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("PNM maxval {maxval} unsupported (8-bit only)")));
    }
    match bytes.get(hd.pos) {
        Some(b) if b.is_ascii_whitespace() => hd.pos += 1,
        _ => return Err(Error::Parse("PNM header not terminated by whitespace".into())),
    }
    let plane = h * w;
    let body = &bytes[hd.pos..];
    if body.len() < c * plane {
        return Err(Error::Parse(format!(
            "PNM truncated: {} of {} sample bytes",
            body.len(),
            c * plane
        )));
    }
    let scale = maxval as f32;
    let mut data = vec![0.0; c * plane];
    for i in 0..plane {
        for ch in 0..c {
            let v = body[i * c + ch];
            data[ch * plane + i] = if maxval == 255 { from_u8(v) } else { v as f32 / scale };
        }
    }
    Tensor::new(&[c, h, w], data)
}

pub fn write(path: &Path, img: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
