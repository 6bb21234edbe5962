//! PNG helpers for color, masks, depth, alpha and normal images.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::gmm::Vec3;
use crate::{Error, Result};

/// Depth in scene units times this value is stored in 16-bit depth PNGs.
pub const DEPTH_PNG_SCALE: f64 = 1000.0;

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_rgb8(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.into_rgb8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.pixels().map(|p| p.0).collect()))
}

pub fn write_rgb8(path: impl AsRef<Path>, width: usize, height: usize, data: &[[u8; 3]]) -> Result<()> {
    let path = path.as_ref();
    let flat: Vec<u8> = data.iter().flatten().copied().collect();
    let img: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(width as u32, height as u32, flat)
        .ok_or_else(|| Error::Dimension(format!("{} pixels for a {width}x{height} image", data.len())))?;
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn read_gray8(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

pub fn write_gray8(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let img: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| Error::Dimension(format!("{} pixels for a {width}x{height} image", data.len())))?;
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn write_gray16(path: impl AsRef<Path>, width: usize, height: usize, data: &[u16]) -> Result<()> {
    let path = path.as_ref();
    let img: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| Error::Dimension(format!("{} pixels for a {width}x{height} image", data.len())))?;
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn read_gray16(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.into_luma16();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

/// Depth as 16-bit PNG: `round(depth · DEPTH_PNG_SCALE)`, 0 for missing depth.
pub fn write_depth16(path: impl AsRef<Path>, width: usize, height: usize, depth: &[f64]) -> Result<()> {
    let q: Vec<u16> = depth
        .iter()
        .map(|&d| {
            if d.is_finite() && d > 0.0 {
                (d * DEPTH_PNG_SCALE).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    write_gray16(path, width, height, &q)
}

pub fn write_alpha16(path: impl AsRef<Path>, width: usize, height: usize, alpha: &[f64]) -> Result<()> {
    let q: Vec<u16> = alpha
        .iter()
        .map(|&a| (a.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    write_gray16(path, width, height, &q)
}

/// Maps each normal component from [−1, 1] to [0, 255].
pub fn normal_to_rgb8(n: &Vec3) -> [u8; 3] {
    let q = |x: f64| ((x.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
    [q(n.x), q(n.y), q(n.z)]
}

pub fn write_normals8(path: impl AsRef<Path>, width: usize, height: usize, normals: &[Vec3]) -> Result<()> {
    let px: Vec<[u8; 3]> = normals.iter().map(normal_to_rgb8).collect();
    write_rgb8(path, width, height, &px)
}
