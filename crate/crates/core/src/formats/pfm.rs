//! Portable float maps (single channel), stored bottom row first.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Little-endian `Pf` file for a row-major image (top row first in memory).
pub fn encode_pfm(width: usize, height: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), width * height);
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    for row in (0..height).rev() {
        for v in &data[row * width..(row + 1) * width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Returns `(width, height, row-major data with the top row first)`.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bad = |reason: &str| Error::Pfm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    // header: three whitespace-separated tokens after the magic, then one whitespace byte
    let mut tokens = Vec::with_capacity(4);
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("non-ASCII header"))?);
    }
    i += 1;
    match tokens[0] {
        "Pf" => {}
        "PF" => return Err(bad("three-channel PFM is not supported")),
        _ => return Err(bad("missing Pf magic")),
    }
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be finite and nonzero"));
    }
    let little = scale < 0.0;
    let payload = bytes.get(i..).unwrap_or(&[]);
    if payload.len() != w * h * 4 {
        return Err(bad(&format!(
            "expected {} payload bytes, found {}",
            w * h * 4,
            payload.len()
        )));
    }
    let mut data = vec![0f32; w * h];
    for (k, c) in payload.chunks_exact(4).enumerate() {
        let arr: [u8; 4] = c.try_into().unwrap();
        let v = if little {
            f32::from_le_bytes(arr)
        } else {
            f32::from_be_bytes(arr)
        };
        let (row, col) = (h - 1 - k / w, k % w);
        data[row * w + col] = v;
    }
    Ok((w, h, data))
}

pub fn write_pfm(path: impl AsRef<Path>, width: usize, height: usize, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(width, height, data)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}
