//! Minimal Netpbm (PGM/PPM) codec that keeps raw sample values.
//!
//! The `image` crate rescales samples to the full 8/16-bit range when
//! `maxval` is not saturated, which destroys relative depth values stored
//! in PGM files. This reader returns the samples exactly as stored.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Netpbm {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

pub(crate) fn is_netpbm(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == b'P' && matches!(bytes[1], b'2' | b'3' | b'5' | b'6')
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws_and_comments(&mut self) {
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

    fn token(&mut self) -> Option<u32> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

pub(crate) fn decode(bytes: &[u8], path: &Path) -> Result<Netpbm> {
    let bad = |reason: &str| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if !is_netpbm(bytes) {
        return Err(bad("not a PGM/PPM file"));
    }
    let (channels, binary) = match bytes[1] {
        b'2' => (1u8, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        _ => unreachable!(),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.token().ok_or_else(|| bad("missing width"))?;
    let height = cur.token().ok_or_else(|| bad("missing height"))?;
    let maxval = cur.token().ok_or_else(|| bad("missing maxval"))?;
    if maxval == 0 || maxval > u32::from(u16::MAX) {
        return Err(bad("maxval out of range"));
    }
    let n = width as usize * height as usize * channels as usize;
    let mut samples = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(bad("truncated header"));
        }
        let raster = &bytes[cur.pos + 1..];
        let wide = maxval > 255;
        let needed = if wide { 2 * n } else { n };
        if raster.len() < needed {
            return Err(bad("truncated raster"));
        }
        if wide {
            samples.extend(
                raster[..needed]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]])),
            );
        } else {
            samples.extend(raster[..n].iter().map(|&b| u16::from(b)));
        }
    } else {
        for _ in 0..n {
            let v = cur.token().ok_or_else(|| bad("truncated raster"))?;
            samples.push(v.min(maxval) as u16);
        }
    }
    if samples.iter().any(|&s| u32::from(s) > maxval) {
        return Err(bad("sample exceeds maxval"));
    }
    Ok(Netpbm {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

/// Writes binary PGM (1 channel) or PPM (3 channels).
pub(crate) fn encode(
    width: u32,
    height: u32,
    channels: u8,
    maxval: u16,
    samples: &[u16],
    out: &mut impl Write,
) -> std::io::Result<()> {
    let magic = if channels == 1 { "P5" } else { "P6" };
    write!(out, "{magic}\n{width} {height}\n{maxval}\n")?;
    if maxval > 255 {
        let mut buf = Vec::with_capacity(samples.len() * 2);
        for s in samples {
            buf.extend_from_slice(&s.to_be_bytes());
        }
        out.write_all(&buf)
    } else {
        let buf: Vec<u8> = samples.iter().map(|&s| s as u8).collect();
        out.write_all(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_and_binary_agree() {
        let ascii = b"P2\n# comment\n2 2\n300\n0 100\n200 300\n";
        let a = decode(ascii, Path::new("a.pgm")).unwrap();
        let mut bin = Vec::new();
        encode(2, 2, 1, 300, &a.samples, &mut bin).unwrap();
        let b = decode(&bin, Path::new("b.pgm")).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.samples, vec![0, 100, 200, 300]);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let bytes = b"P5\n4 4\n255\n\x01\x02";
        assert!(decode(bytes, Path::new("t.pgm")).is_err());
    }
}
