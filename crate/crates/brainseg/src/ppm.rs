//! Binary PPM (P6) output for rendered images, plus the heatmap CSV dump.
//! Channel reals in [0,1] quantize to bytes by round-half-up.

use std::fmt::Write as _;
use std::path::Path;

use brainseg_core::explain::{Heatmap, RgbImage};

use crate::error::{Error, Result};

/// Maps a real in [0,1] (clamped) to a byte.
pub fn quantize(v: f64) -> u8 {
    let c = v.clamp(0.0, 1.0);
    (c * 255.0 + 0.5).floor() as u8
}

/// Serializes as binary PPM: `P6\n{width} {height}\n255\n` then RGB bytes.
pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| quantize(v)));
    out
}

pub fn write_ppm(image: &RgbImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}

/// Parses a binary PPM produced by [`encode_ppm`]; bytes map back to reals
/// as `b / 255`.
pub fn read_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let header_err = |detail: &str| Error::format(path, detail.to_string());
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(header_err("truncated header"));
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P6" {
        return Err(header_err("magic is not P6"));
    }
    let parse = |field: &[u8], what: &str| -> Result<usize> {
        std::str::from_utf8(field)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::format(path, format!("bad {what} field")))
    };
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    if parse(fields[3], "maxval")? != 255 {
        return Err(header_err("maxval is not 255"));
    }
    pos += 1;
    let need = width * height * 3;
    if bytes.len() - pos != need {
        return Err(Error::format(
            path,
            format!("payload has {} bytes, expected {need}", bytes.len() - pos),
        ));
    }
    let data = bytes[pos..].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(RgbImage { height, width, data })
}

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_ppm(&bytes, path)
}

/// Concatenates equal-height images left to right.
pub fn compose_row(images: &[&RgbImage]) -> Result<RgbImage> {
    let Some(first) = images.first() else {
        return Err(Error::validation("compose_row needs at least one image"));
    };
    let height = first.height;
    if images.iter().any(|im| im.height != height) {
        return Err(Error::validation("compose_row images must share a height"));
    }
    let width: usize = images.iter().map(|im| im.width).sum();
    let mut data = Vec::with_capacity(height * width * 3);
    for row in 0..height {
        for im in images {
            let start = row * im.width * 3;
            data.extend_from_slice(&im.data[start..start + im.width * 3]);
        }
    }
    Ok(RgbImage { height, width, data })
}

/// Writes the heatmap as CSV, one row per image row, values in shortest
/// round-trip decimal form.
pub fn write_heatmap_csv(heatmap: &Heatmap, path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in 0..heatmap.height {
        for col in 0..heatmap.width {
            if col > 0 {
                out.push(',');
            }
            write!(out, "{}", heatmap.values[row * heatmap.width + col])
                .expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a heatmap CSV back into rows of reals.
pub fn read_heatmap_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(str::parse::<f64>).collect();
        rows.push(row.map_err(|_| Error::format(path, format!("row {} is not numeric", i + 1)))?);
    }
    Ok(rows)
}
