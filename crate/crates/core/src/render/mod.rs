//! Ray shading in three blending modes, image rendering and flow rendering.

pub(crate) mod kernel;

use rayon::prelude::*;

use crate::camera::Camera;
use crate::gmm::{Mixture, Ray, Vec3};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlendMode {
    /// Sort-free blending with five hyperparameters and a sigmoid alpha.
    Weighted5,
    /// Sort-free blending with `w = exp(β₁d − β₂t/η)` and `α = 1 − exp(−Σδ)`.
    Weighted2,
    /// Front-to-back compositing; hyperparameter free.
    AlphaComposited,
}

impl std::str::FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weighted5" | "weighted-5" => Ok(BlendMode::Weighted5),
            "weighted2" | "weighted-2" | "weighted" => Ok(BlendMode::Weighted2),
            "composited" | "alpha" | "alphacomposited" | "alpha-composited" => Ok(BlendMode::AlphaComposited),
            other => Err(Error::Invalid(format!("unknown blend mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for BlendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlendMode::Weighted5 => "weighted5",
            BlendMode::Weighted2 => "weighted2",
            BlendMode::AlphaComposited => "composited",
        })
    }
}

pub const DEFAULT_BETA1: f64 = 21.4;
#[allow(clippy::approx_constant)]
pub const DEFAULT_BETA2: f64 = 3.14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub mode: BlendMode,
    /// `β₁..β₅`; the last three only matter for [`BlendMode::Weighted5`].
    pub beta: [f64; 5],
    pub eta: f64,
    pub quality_eps: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            mode: BlendMode::Weighted2,
            beta: [DEFAULT_BETA1, DEFAULT_BETA2, 5.0, 2.0, -3.0],
            eta: 1.0,
            quality_eps: 0.9,
        }
    }
}

impl RenderConfig {
    pub fn with_mode(mode: BlendMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// Same settings with `η` taken from the mixture.
    pub fn for_mixture(mut self, mix: &Mixture) -> Self {
        self.eta = mix.scene_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != BlendMode::AlphaComposited && !(self.beta[0] > 0.0 && self.beta[1] >= 0.0) {
            return Err(Error::Invalid(format!(
                "weighted modes need beta1 > 0 and beta2 >= 0, got {:?}",
                &self.beta[..2]
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Invalid("eta must be positive".into()));
        }
        if !(self.quality_eps > 0.0 && self.quality_eps <= 1.0) {
            return Err(Error::Invalid("quality eps must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayShadeResult {
    /// Blended depth; `+∞` for background rays.
    pub t_final: f64,
    pub alpha: f64,
    /// Unit normal facing the camera; zero for background rays.
    pub normal: Vec3,
    pub color: Vec3,
    /// Largest normalized blend weight.
    pub max_weight: f64,
}

impl RayShadeResult {
    pub fn is_background(&self) -> bool {
        self.t_final.is_infinite()
    }
}

/// Reusable per-thread shading state for a fixed mixture.
pub struct Shader {
    comps: Vec<kernel::Prepared>,
    cfg: RenderConfig,
    trace: kernel::Trace,
}

impl Shader {
    pub fn new(mix: &Mixture, cfg: &RenderConfig) -> Self {
        Self {
            comps: kernel::prepare(&mix.components),
            cfg: *cfg,
            trace: kernel::Trace::default(),
        }
    }

    pub fn shade(&mut self, ray: &Ray) -> RayShadeResult {
        kernel::trace_ray(ray, &self.comps, &self.cfg, &mut self.trace);
        let tr = &self.trace;
        RayShadeResult {
            t_final: tr.t_final,
            alpha: tr.alpha,
            normal: kernel::blended_normal(ray, &self.comps, tr),
            color: tr.color,
            max_weight: tr.max_weight,
        }
    }

    /// Normalized blend weights of the last shaded ray, as `(component, weight)`.
    pub fn last_weights(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.trace.hits.iter().map(|h| (h.idx, h.w))
    }

    /// Per-component `(t_i, δ_i)` of the last shaded ray (components that
    /// took part in the blend only).
    pub fn last_intersections(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.trace.hits.iter().map(|h| (h.idx, h.t, h.delta))
    }
}

/// Sort-free shading; `cfg.mode` must be one of the weighted modes.
pub fn shade_ray_weighted(ray: &Ray, mix: &Mixture, cfg: &RenderConfig) -> Result<RayShadeResult> {
    if cfg.mode == BlendMode::AlphaComposited {
        return Err(Error::Invalid("shade_ray_weighted needs a weighted mode".into()));
    }
    Ok(Shader::new(mix, cfg).shade(ray))
}

/// Front-to-back composited shading.
pub fn shade_ray_composited(ray: &Ray, mix: &Mixture) -> RayShadeResult {
    let cfg = RenderConfig::with_mode(BlendMode::AlphaComposited).for_mixture(mix);
    Shader::new(mix, &cfg).shade(ray)
}

pub fn shade_ray(ray: &Ray, mix: &Mixture, cfg: &RenderConfig) -> RayShadeResult {
    Shader::new(mix, cfg).shade(ray)
}

/// Row-major per-pixel render outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderMaps {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
    pub normal: Vec<Vec3>,
    pub color: Vec<Vec3>,
    pub max_weight: Vec<f64>,
}

pub fn render_maps(cam: &Camera, mix: &Mixture, cfg: &RenderConfig) -> RenderMaps {
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<Vec<RayShadeResult>> = (0..h)
        .into_par_iter()
        .map_init(
            || Shader::new(mix, cfg),
            |shader, row| (0..w).map(|col| shader.shade(&cam.pixel_ray(col, row))).collect(),
        )
        .collect();
    let n = w * h;
    let mut maps = RenderMaps {
        width: w,
        height: h,
        depth: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        normal: Vec::with_capacity(n),
        color: Vec::with_capacity(n),
        max_weight: Vec::with_capacity(n),
    };
    for r in rows.iter().flatten() {
        maps.depth.push(r.t_final);
        maps.alpha.push(r.alpha);
        maps.normal.push(r.normal);
        maps.color.push(r.color);
        maps.max_weight.push(r.max_weight);
    }
    maps
}

/// Pixels whose predicted flow is undefined carry this value in both channels.
pub const FLOW_INVALID: f32 = f32::INFINITY;
/// Pixels rendered with lower alpha have no flow.
pub const FLOW_ALPHA_CUTOFF: f64 = 1e-3;

/// A two-channel pixel displacement buffer, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 2]>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn get(&self, col: usize, row: usize) -> [f32; 2] {
        self.data[row * self.width + col]
    }

    pub fn is_valid(v: [f32; 2]) -> bool {
        v[0].is_finite() && v[1].is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowMaps {
    pub forward: Option<FlowField>,
    pub backward: Option<FlowField>,
}

/// Pixel displacement of the world point `x` seen at `(u, v)` in the source
/// camera when it is reprojected into `target`.
pub fn reproject_flow(target: &Camera, x: &Vec3, u: f64, v: f64) -> Option<[f64; 2]> {
    target.project(x).map(|p| [p[0] - u, p[1] - v])
}

/// Renders forward (`cam → next`) and backward (`cam → prev`) flow by
/// lifting each pixel's blended depth into the world and reprojecting it.
pub fn render_flow(
    cam: &Camera,
    prev: Option<&Camera>,
    next: Option<&Camera>,
    mix: &Mixture,
    cfg: &RenderConfig,
) -> Result<FlowMaps> {
    if prev.is_none() && next.is_none() {
        return Err(Error::Invalid("render_flow needs at least one adjacent camera".into()));
    }
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<Vec<([f32; 2], [f32; 2])>> = (0..h)
        .into_par_iter()
        .map_init(
            || Shader::new(mix, cfg),
            |shader, row| {
                (0..w)
                    .map(|col| {
                        let (u, v) = (col as f64 + 0.5, row as f64 + 0.5);
                        let ray = cam.generate_ray(u, v);
                        let res = shader.shade(&ray);
                        let invalid = [FLOW_INVALID; 2];
                        if res.is_background() || res.alpha < FLOW_ALPHA_CUTOFF {
                            return (invalid, invalid);
                        }
                        let x = ray.at(res.t_final);
                        let flow = |c: Option<&Camera>| {
                            c.and_then(|c| reproject_flow(c, &x, u, v))
                                .map(|f| [f[0] as f32, f[1] as f32])
                                .unwrap_or(invalid)
                        };
                        (flow(next), flow(prev))
                    })
                    .collect()
            },
        )
        .collect();
    let all: Vec<_> = rows.into_iter().flatten().collect();
    Ok(FlowMaps {
        forward: next.map(|_| FlowField::new(w, h, all.iter().map(|p| p.0).collect())),
        backward: prev.map(|_| FlowField::new(w, h, all.iter().map(|p| p.1).collect())),
    })
}

#[cfg(test)]
mod tests;
