//! Oriented point clouds rendered from training views.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::camera::Camera;
use crate::dataset::Dataset;
use crate::formats::ply::{self, Property, ScalarKind, VertexTable};
use crate::gmm::{Mixture, Ray, Vec3};
use crate::render::{BlendMode, RenderConfig, Shader};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedPoint {
    pub position: [f32; 3],
    pub normal: [f32; 3],
    pub color: [u8; 3],
}

/// Unit normal from per-component local estimates.
///
/// `samples` holds `(component, t, weight)`: each component contributes
/// `Σ⁻¹(o + v·t − μ)`, normalized and turned towards the camera, and the
/// contributions are blended by `weight` and renormalized. A component whose
/// estimate vanishes contributes `−v`.
pub fn normal_blended(ray: &Ray, mix: &Mixture, samples: &[(usize, f64, f64)]) -> Vec3 {
    let mut acc = Vec3::zeros();
    for &(i, t, w) in samples {
        let g = &mix.components[i];
        let n = g.precision() * (ray.at(t) - g.mean);
        let len = n.norm();
        let n = if len > 1e-300 { n / len } else { -ray.direction };
        let n = if n.dot(&ray.direction) > 0.0 { -n } else { n };
        acc += n * w;
    }
    let len = acc.norm();
    if len > 1e-300 {
        acc / len
    } else {
        -ray.direction
    }
}

/// Normals from a depth map by crossing horizontal and vertical neighbor
/// differences. Border pixels, background pixels and pixels whose neighbors
/// differ in depth by more than `0.05 · eta` are `None`.
pub fn normal_screen_space(depth: &[f64], cam: &Camera, eta: f64) -> Vec<Option<Vec3>> {
    let (w, h) = (cam.width, cam.height);
    assert_eq!(depth.len(), w * h);
    let point = |c: usize, r: usize| cam.pixel_ray(c, r).at(depth[r * w + c]);
    let limit = 0.05 * eta;
    let mut out = vec![None; w * h];
    for r in 0..h.saturating_sub(1) {
        for c in 0..w.saturating_sub(1) {
            let d = depth[r * w + c];
            let (dx, dy) = (depth[r * w + c + 1], depth[(r + 1) * w + c]);
            if !(d.is_finite() && dx.is_finite() && dy.is_finite()) {
                continue;
            }
            if (dx - d).abs() > limit || (dy - d).abs() > limit {
                continue;
            }
            let p = point(c, r);
            let n = (p - point(c + 1, r)).cross(&(p - point(c, r + 1)));
            let len = n.norm();
            if !(len > 0.0) {
                continue;
            }
            let n = n / len;
            let v = cam.pixel_ray(c, r).direction;
            out[r * w + c] = Some(if n.dot(&v) > 0.0 { -n } else { n });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalMethod {
    Blended,
    ScreenSpace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSource {
    Mixture,
    Images,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExportConfig {
    /// Points are kept when the largest normalized weight exceeds this.
    pub quality_eps: f64,
    pub alpha_gate: f64,
    pub normal: NormalMethod,
    pub color: ColorSource,
    /// Use every `stride`-th view.
    pub view_stride: usize,
    /// Positions are divided by this before export (the canonical scale).
    pub unscale: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            quality_eps: 0.9,
            alpha_gate: 0.5,
            normal: NormalMethod::ScreenSpace,
            color: ColorSource::Mixture,
            view_stride: 1,
            unscale: 1.0,
        }
    }
}

fn quantize(c: &Vec3) -> [u8; 3] {
    let q = crate::dataset::linear_to_srgb8;
    [q(c.x), q(c.y), q(c.z)]
}

/// An exported point with the view and pixel it was rendered from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourcedPoint {
    pub point: OrientedPoint,
    pub view: usize,
    /// `(col, row)`.
    pub pixel: [usize; 2],
}

/// Renders every selected view with alpha compositing and collects the
/// pixels that pass the alpha gate and the quality threshold.
pub fn export_oriented_points(
    mix: &Mixture,
    cams: &[Camera],
    cfg: &ExportConfig,
    images: Option<&Dataset>,
) -> Result<Vec<OrientedPoint>> {
    Ok(export_sourced_points(mix, cams, cfg, images)?
        .into_iter()
        .map(|p| p.point)
        .collect())
}

pub fn export_sourced_points(
    mix: &Mixture,
    cams: &[Camera],
    cfg: &ExportConfig,
    images: Option<&Dataset>,
) -> Result<Vec<SourcedPoint>> {
    if cams.is_empty() {
        return Err(Error::Invalid("export needs at least one camera".into()));
    }
    if cfg.color == ColorSource::Images && images.is_none() {
        return Err(Error::Invalid("image colors requested without a dataset".into()));
    }
    if !(cfg.unscale > 0.0) {
        return Err(Error::Invalid("unscale factor must be positive".into()));
    }
    let rcfg = RenderConfig::with_mode(BlendMode::AlphaComposited).for_mixture(mix);
    let stride = cfg.view_stride.max(1);
    let views: Vec<usize> = (0..cams.len()).step_by(stride).collect();
    let per_view: Vec<Vec<SourcedPoint>> = views
        .par_iter()
        .map(|&vi| {
            let cam = &cams[vi];
            let mut shader = Shader::new(mix, &rcfg);
            let n = cam.pixel_count();
            let mut results = Vec::with_capacity(n);
            for r in 0..cam.height {
                for c in 0..cam.width {
                    let ray = cam.pixel_ray(c, r);
                    results.push((ray, shader.shade(&ray)));
                }
            }
            let screen = (cfg.normal == NormalMethod::ScreenSpace).then(|| {
                let depth: Vec<f64> = results.iter().map(|x| x.1.t_final).collect();
                normal_screen_space(&depth, cam, mix.scene_scale)
            });
            let mut pts = Vec::new();
            for (k, (ray, res)) in results.iter().enumerate() {
                if res.is_background() || res.alpha < cfg.alpha_gate || !(res.max_weight > cfg.quality_eps) {
                    continue;
                }
                let normal = match &screen {
                    Some(s) => match s[k] {
                        Some(n) => n,
                        None => continue,
                    },
                    None => res.normal,
                };
                let color = match cfg.color {
                    ColorSource::Mixture => res.color,
                    ColorSource::Images => images.unwrap().frames[vi].color[k],
                };
                let p = ray.at(res.t_final) / cfg.unscale;
                pts.push(SourcedPoint {
                    point: OrientedPoint {
                        position: [p.x as f32, p.y as f32, p.z as f32],
                        normal: [normal.x as f32, normal.y as f32, normal.z as f32],
                        color: quantize(&color),
                    },
                    view: vi,
                    pixel: [k % cam.width, k / cam.width],
                });
            }
            pts
        })
        .collect();
    let pts: Vec<SourcedPoint> = per_view.into_iter().flatten().collect();
    if pts.is_empty() {
        log::warn!("no pixel passed the export filters");
    }
    Ok(pts)
}

const POINT_PROPS: [(&str, ScalarKind); 9] = [
    ("x", ScalarKind::F32),
    ("y", ScalarKind::F32),
    ("z", ScalarKind::F32),
    ("nx", ScalarKind::F32),
    ("ny", ScalarKind::F32),
    ("nz", ScalarKind::F32),
    ("red", ScalarKind::U8),
    ("green", ScalarKind::U8),
    ("blue", ScalarKind::U8),
];

pub fn encode_oriented_ply(points: &[OrientedPoint]) -> Vec<u8> {
    let props: Vec<Property> = POINT_PROPS.iter().map(|(n, k)| Property::new(*n, *k)).collect();
    let mut out = Vec::with_capacity(200 + points.len() * 27);
    ply::write_vertex_header(&mut out, &[], points.len(), &props).expect("write to Vec");
    for p in points {
        for v in p.position.iter().chain(&p.normal) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&p.color);
    }
    out
}

pub fn decode_oriented_ply(bytes: &[u8]) -> Result<Vec<OrientedPoint>> {
    let t = VertexTable::parse(bytes)?;
    for (name, kind) in POINT_PROPS {
        match t.kind(name) {
            None => return Err(Error::PlyMissingProperty(name.into())),
            Some(k) if k != kind => return Err(Error::PlyHeader(format!("property `{name}` has type {}", k.name()))),
            _ => {}
        }
    }
    let f = |row: usize, name: &str| f32::from_le_bytes(t.raw(row, name).unwrap().try_into().unwrap());
    let b = |row: usize, name: &str| t.raw(row, name).unwrap()[0];
    Ok((0..t.len())
        .map(|i| OrientedPoint {
            position: [f(i, "x"), f(i, "y"), f(i, "z")],
            normal: [f(i, "nx"), f(i, "ny"), f(i, "nz")],
            color: [b(i, "red"), b(i, "green"), b(i, "blue")],
        })
        .collect())
}

pub fn write_oriented_ply(points: &[OrientedPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_oriented_ply(points)).map_err(|e| Error::io(path, e))
}

pub fn read_oriented_ply(path: impl AsRef<Path>) -> Result<Vec<OrientedPoint>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_oriented_ply(&bytes)
}
