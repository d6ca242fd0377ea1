//! Headered CSV exchange format for real and count fields, plus atomic file
//! writes. Each row is `x,y,value`, rows in row-major order; reals are written
//! with shortest round-trip precision.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Grid;

const HEADER: [&str; 3] = ["x", "y", "value"];

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn encode_with<T>(grid: &Grid<T>, fmt: impl Fn(&T) -> String) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            let v = &grid.as_slice()[grid.index(x, y)];
            w.write_record([x.to_string(), y.to_string(), fmt(v)])?;
        }
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn encode_real(grid: &Grid<f64>) -> Result<Vec<u8>> {
    encode_with(grid, |v| format!("{v}"))
}

pub fn encode_counts(grid: &Grid<u32>) -> Result<Vec<u8>> {
    encode_with(grid, |v| v.to_string())
}

fn decode_with<T: Clone + Default>(
    bytes: &[u8],
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Grid<T>> {
    let bad = |msg: String| Error::Parse {
        format: "field CSV",
        msg,
    };
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(bad(format!("expected header x,y,value, got {header:?}")));
    }
    let mut cells = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(bad(format!("row {}: expected 3 columns", line + 1)));
        }
        let x: usize = rec[0].trim().parse().map_err(|_| bad(format!("row {}: bad x", line + 1)))?;
        let y: usize = rec[1].trim().parse().map_err(|_| bad(format!("row {}: bad y", line + 1)))?;
        let v = parse(rec[2].trim()).ok_or_else(|| bad(format!("row {}: bad value", line + 1)))?;
        cells.push((x, y, v));
    }
    let width = cells.iter().map(|c| c.0).max().map_or(0, |m| m + 1);
    let height = cells.iter().map(|c| c.1).max().map_or(0, |m| m + 1);
    if width == 0 || cells.len() != width * height {
        return Err(bad(format!(
            "{} rows do not cover a {width}x{height} grid",
            cells.len()
        )));
    }
    let mut seen = vec![false; width * height];
    let mut data = vec![T::default(); width * height];
    for (x, y, v) in cells {
        let i = y * width + x;
        if std::mem::replace(&mut seen[i], true) {
            return Err(bad(format!("duplicate pixel {x},{y}")));
        }
        data[i] = v;
    }
    Grid::new(width, height, data)
}

pub fn decode_real(bytes: &[u8]) -> Result<Grid<f64>> {
    let grid = decode_with(bytes, |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))?;
    Ok(grid)
}

pub fn decode_counts(bytes: &[u8]) -> Result<Grid<u32>> {
    decode_with(bytes, |s| s.parse::<u32>().ok())
}

pub fn read_real(path: &Path) -> Result<Grid<f64>> {
    decode_real(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_counts(path: &Path) -> Result<Grid<u32>> {
    decode_counts(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
