//! Binary PGM (P5) reader and writer.
//!
//! Samples are one byte when `maxval < 256`, otherwise two bytes big-endian.
//! Header tokens are separated by whitespace and may be interleaved with
//! `#` comments; exactly one whitespace byte separates `maxval` from the
//! raster.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(self.context, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(self.context, format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8], context: &str) -> Result<Pgm> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::parse(context, "missing P5 magic"));
    }
    let mut h = Header {
        bytes,
        pos: 2,
        context,
    };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(context, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(context, format!("maxval {maxval} not in 1..=65535")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::parse(context, "missing whitespace after maxval")),
    }
    let maxval = maxval as u16;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse(context, "image too large"))?;
    let bps = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[h.pos..];
    if raster.len() < n * bps {
        return Err(Error::parse(
            context,
            format!(
                "raster truncated: need {} bytes, found {}",
                n * bps,
                raster.len()
            ),
        ));
    }
    let samples: Vec<u16> = if bps == 1 {
        raster[..n].iter().map(|&b| b as u16).collect()
    } else {
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some((i, &v)) = samples.iter().enumerate().find(|(_, &v)| v > maxval) {
        return Err(Error::parse(
            context,
            format!(
                "sample {v} at ({}, {}) exceeds maxval {maxval}",
                i % width,
                i / width
            ),
        ));
    }
    Ok(Pgm {
        width,
        height,
        maxval,
        samples,
    })
}

pub fn encode(pgm: &Pgm) -> Vec<u8> {
    let header = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval);
    let bps = if pgm.maxval < 256 { 1 } else { 2 };
    let mut out = Vec::with_capacity(header.len() + bps * pgm.samples.len());
    out.extend_from_slice(header.as_bytes());
    if bps == 1 {
        out.extend(pgm.samples.iter().map(|&v| v as u8));
    } else {
        for &v in &pgm.samples {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}
