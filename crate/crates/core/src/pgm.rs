//! 8-bit grayscale Netpbm (PGM) reading and writing.
//! Reads ASCII `P2` and binary `P5` with `maxval <= 255`; writes `P5`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Grid, IntensityImage};

fn malformed(msg: impl Into<String>) -> Error {
    Error::Parse {
        format: "PGM",
        msg: msg.into(),
    }
}

struct Header {
    binary: bool,
    width: usize,
    height: usize,
    maxval: u32,
    /// Offset of the first raster byte.
    data_start: usize,
}

/// Skips whitespace and `#` comments, returning the next token and the offset
/// just past it.
fn next_token(bytes: &[u8], mut pos: usize) -> Result<(&[u8], usize)> {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' && bytes[pos] != b'\r' {
                pos += 1;
            }
            continue;
        }
        break;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
        pos += 1;
    }
    if start == pos {
        return Err(malformed("unexpected end of header"));
    }
    Ok((&bytes[start..pos], pos))
}

fn parse_uint(tok: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| malformed(format!("bad {what}: {:?}", String::from_utf8_lossy(tok))))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let (magic, pos) = next_token(bytes, 0)?;
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(malformed(format!(
                "unsupported magic {:?} (expected P2 or P5)",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let (tok, pos) = next_token(bytes, pos)?;
    let width = parse_uint(tok, "width")?;
    let (tok, pos) = next_token(bytes, pos)?;
    let height = parse_uint(tok, "height")?;
    let (tok, pos) = next_token(bytes, pos)?;
    let maxval = parse_uint(tok, "maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(malformed(format!("maxval {maxval} outside 1..=255")));
    }
    // Exactly one whitespace byte separates maxval from a binary raster.
    if pos >= bytes.len() && binary {
        return Err(malformed("missing raster"));
    }
    Ok(Header {
        binary,
        width,
        height,
        maxval: maxval as u32,
        data_start: (pos + 1).min(bytes.len()),
    })
}

/// Decodes a PGM byte buffer. Pixel values are returned unscaled
/// (`0..=maxval`) as reals.
pub fn decode(bytes: &[u8]) -> Result<IntensityImage> {
    let header = parse_header(bytes)?;
    let n = header.width * header.height;
    let mut data = Vec::with_capacity(n);
    if header.binary {
        let raster = &bytes[header.data_start..];
        if raster.len() < n {
            return Err(malformed(format!(
                "raster has {} bytes, expected {n}",
                raster.len()
            )));
        }
        for &b in &raster[..n] {
            if u32::from(b) > header.maxval {
                return Err(malformed(format!("sample {b} exceeds maxval {}", header.maxval)));
            }
            data.push(f64::from(b));
        }
    } else {
        let mut pos = header.data_start.saturating_sub(1);
        for _ in 0..n {
            let (tok, next) = next_token(bytes, pos).map_err(|_| malformed("too few samples"))?;
            let v = parse_uint(tok, "sample")?;
            if v > header.maxval as usize {
                return Err(malformed(format!("sample {v} exceeds maxval {}", header.maxval)));
            }
            data.push(v as f64);
            pos = next;
        }
    }
    Grid::from_values(header.width, header.height, data)
}

pub fn read(path: &Path) -> Result<IntensityImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Encodes as binary `P5` with `maxval = 255`. Values are rounded and
/// clamped to `0..=255`.
pub fn encode(img: &IntensityImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.as_slice()
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8),
    );
    out
}

/// Linear map of `[min, max]` onto `0..=255` for previews. Constant images
/// map to mid-gray.
pub fn to_preview(img: &IntensityImage) -> IntensityImage {
    let (lo, hi) = img.min_max();
    if hi > lo {
        img.map(|v| 255.0 * (v - lo) / (hi - lo))
    } else {
        img.map(|_| 128.0)
    }
}
