//! Middlebury `.flo` optical flow files.

use std::fs;
use std::path::Path;

use crate::render::FlowField;
use crate::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

pub fn encode_flo(field: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + field.data.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(field.width as i32).to_le_bytes());
    out.extend_from_slice(&(field.height as i32).to_le_bytes());
    for v in &field.data {
        out.extend_from_slice(&v[0].to_le_bytes());
        out.extend_from_slice(&v[1].to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<FlowField> {
    let bad = |reason: String| Error::Flo {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 {
        return Err(bad(format!("{} bytes is too short for a header", bytes.len())));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(bad(format!("magic number {magic} (expected {FLO_MAGIC})")));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(bad(format!("invalid size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + w * h * 8;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = bytes[12..]
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..].try_into().unwrap()),
            ]
        })
        .collect();
    Ok(FlowField::new(w, h, data))
}

pub fn write_flo(path: impl AsRef<Path>, field: &FlowField) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flo(field)).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_bits() {
        let f = FlowField::new(
            3,
            2,
            vec![
                [0.5, -1.25],
                [f32::INFINITY; 2],
                [1e-7, 3.0],
                [0.0, -0.0],
                [7.0, 8.0],
                [-9.5, 1e6],
            ],
        );
        let bytes = encode_flo(&f);
        assert_eq!(&bytes[..4], b"PIEH");
        let back = decode_flo(&bytes, Path::new("x.flo")).unwrap();
        assert_eq!(back.width, 3);
        for (a, b) in f.data.iter().zip(&back.data) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }

    #[test]
    fn corrupt_magic_names_file() {
        let mut bytes = encode_flo(&FlowField::new(1, 1, vec![[0.0, 0.0]]));
        bytes[0] ^= 1;
        let err = decode_flo(&bytes, Path::new("frame_0003.flo")).unwrap_err();
        assert!(err.to_string().contains("frame_0003.flo"), "{err}");
        assert!(matches!(err, Error::Flo { .. }));
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let mut bytes = encode_flo(&FlowField::new(2, 1, vec![[0.0, 0.0]; 2]));
        bytes.pop();
        assert!(decode_flo(&bytes, Path::new("a.flo")).is_err());
    }
}
