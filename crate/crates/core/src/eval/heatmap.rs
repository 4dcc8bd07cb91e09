//! Binary portable graymaps (`P5`, 8-bit).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::template::Dims;

/// Gray levels of the palette.
pub const LEVELS: u8 = 255;

/// Gray level of `x` on a linear palette over `[lo, hi]`, clamped.
pub fn quantize(x: f64, lo: f64, hi: f64) -> u8 {
    if !(hi > lo) {
        return 0;
    }
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * LEVELS as f64).round() as u8
}

/// Inverse of [`quantize`] up to half a palette step.
pub fn dequantize(g: u8, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * g as f64 / LEVELS as f64
}

/// Row-major graymap of `map` on `dims`.
pub fn render(map: &[f64], dims: Dims, range: (f64, f64)) -> Result<Vec<u8>> {
    if map.len() != dims.len() {
        return Err(Error::DimsMismatch {
            len: map.len(),
            rows: dims.rows,
            cols: dims.cols,
        });
    }
    let mut out = format!("P5\n{} {}\n{}\n", dims.cols, dims.rows, LEVELS).into_bytes();
    out.extend(map.iter().map(|&x| quantize(x, range.0, range.1)));
    Ok(out)
}

pub fn emit_heatmap(path: &Path, map: &[f64], dims: Dims, range: (f64, f64)) -> Result<()> {
    let bytes = render(map, dims, range)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// `(min, max)` of the finite values, or `(0, 1)` if there are none.
pub fn data_range(map: &[f64]) -> (f64, f64) {
    let (lo, hi) = map
        .iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Reads a `P5` graymap written by [`emit_heatmap`]: dims and gray levels.
pub fn read_graymap(path: &Path) -> Result<(Dims, Vec<u8>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::parse(path, format!("unsupported magic {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::parse(path, format!("bad header field {s:?}")));
    let (cols, rows, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != LEVELS as usize {
        return Err(Error::parse(path, format!("expected maxval {LEVELS}, got {max}")));
    }
    let data = &bytes[pos + 1..];
    if data.len() != rows * cols {
        return Err(Error::parse(path, format!("expected {} pixels, found {}", rows * cols, data.len())));
    }
    Ok((Dims::new(rows, cols), data.to_vec()))
}
