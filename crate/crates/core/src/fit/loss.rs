//! Mask, color and flow losses with exact gradients.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::fit::batch::{RayBatch, RayRecord};
use crate::gmm::{Mixture, Vec3, PARAMS_PER_COMPONENT};
use crate::render::kernel::{self, Prepared, Trace};
use crate::render::RenderConfig;
use crate::{Error, Result};

/// Predicted alpha is clipped to `[ALPHA_CLIP, 1 − ALPHA_CLIP]` inside the
/// cross-entropy.
pub const ALPHA_CLIP: f64 = 1e-6;

/// Rays per reduction chunk. Fixed so sums do not depend on thread count.
const CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 4.5,
            lambda_f: 210.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0 && self.lambda_f >= 0.0) {
            return Err(Error::Invalid(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Batch means of the individual terms; `total = mask + λ_C·color + λ_F·flow`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub mask: f64,
    pub color: f64,
    pub flow: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub terms: LossTerms,
    /// Weighted total per ray, in batch order.
    pub per_ray: Vec<f64>,
}

impl LossOutput {
    pub fn total(&self) -> f64 {
        self.terms.total
    }
}

/// Gradient of the mean batch loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    /// Same layout as [`Mixture::to_params`].
    pub params: Vec<f64>,
    /// With respect to the inverse focal length shared by all cameras.
    pub inv_focal: f64,
}

#[derive(Clone, Copy, Default)]
struct RayLoss {
    mask: f64,
    color: f64,
    flow: f64,
}

/// Loss of one ray. When `grad` is given, accumulates `scale · ∂L/∂θ`.
fn ray_loss(
    rec: &RayRecord,
    cameras: &[Camera],
    comps: &[Prepared],
    cfg: &RenderConfig,
    w: &LossWeights,
    tr: &mut Trace,
    grad: Option<(&mut [f64], &mut f64, f64)>,
) -> RayLoss {
    let ray = &rec.ray;
    kernel::trace_ray(ray, comps, cfg, tr);

    let target = rec.target_alpha;
    let alpha = tr.alpha;
    let a = alpha.clamp(ALPHA_CLIP, 1.0 - ALPHA_CLIP);
    let mask = -(target * a.ln() + (1.0 - target) * (1.0 - a).ln());
    let g_alpha = if alpha > ALPHA_CLIP && alpha < 1.0 - ALPHA_CLIP {
        -target / a + (1.0 - target) / (1.0 - a)
    } else {
        0.0
    };

    let diff = tr.color - rec.target_color;
    let color = target * diff.abs().sum();
    let g_color = diff.map(sign) * (target * w.lambda_c);

    let mut flow = 0.0;
    let mut g_x = Vec3::zeros();
    let mut g_f_proj = 0.0;
    if target != 0.0 && !tr.background {
        let x = ray.at(tr.t_final);
        let src = &cameras[rec.frame];
        let dirs = [(rec.flow_fwd, rec.frame + 1), (rec.flow_bwd, rec.frame.wrapping_sub(1))];
        let mut terms = [(0.0, Vec3::zeros(), 0.0); 2];
        let mut count = 0;
        for (f, adj) in dirs {
            let (Some(f), Some(cam)) = (f, cameras.get(adj)) else {
                continue;
            };
            if let Some(t) = flow_term(&x, rec.pixel, src, cam, f) {
                terms[count] = t;
                count += 1;
            }
        }
        if count > 0 {
            let k = target / count as f64;
            for (l, gx, gf) in &terms[..count] {
                flow += k * l;
                g_x += gx * (k * w.lambda_f);
                g_f_proj += gf * (k * w.lambda_f);
            }
        }
    }

    if let Some((grads, g_inv_focal, scale)) = grad {
        let g_t = g_x.dot(&ray.direction) * scale;
        let g_dir = kernel::backprop(ray, comps, cfg, tr, g_t, &(g_color * scale), g_alpha * scale, grads);
        let depth = if tr.background { 0.0 } else { tr.t_final };
        let g_v = g_dir + g_x * (depth * scale);
        *g_inv_focal += g_f_proj * scale + direction_inv_focal_grad(&cameras[rec.frame], rec.pixel, &g_v);
    }

    RayLoss { mask, color, flow }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L1 flow error towards one adjacent camera with its gradients with respect
/// to the lifted point and the inverse focal length. `None` when the point
/// is behind the adjacent camera.
fn flow_term(x: &Vec3, pixel: [f64; 2], src: &Camera, cam: &Camera, target: [f64; 2]) -> Option<(f64, Vec3, f64)> {
    let xc = cam.pose.to_camera(x);
    if !(xc.z > 0.0) {
        return None;
    }
    let f = cam.inv_focal;
    let iz = 1.0 / (xc.z * f);
    let pu = xc.x * iz + cam.width as f64 / 2.0;
    let pv = xc.y * iz + cam.height as f64 / 2.0;
    let scale = src.flow_scale();
    let du = (pu - pixel[0]) / scale - target[0];
    let dv = (pv - pixel[1]) / scale - target[1];
    let loss = du.abs() + dv.abs();
    let (su, sv) = (sign(du) / scale, sign(dv) / scale);
    let g_xc = Vec3::new(su * iz, sv * iz, -(su * xc.x + sv * xc.y) * iz / xc.z);
    let g_x = cam.pose.rotation * g_xc;
    let g_f = -(su * (pu - cam.width as f64 / 2.0) + sv * (pv - cam.height as f64 / 2.0)) / f;
    Some((loss, g_x, g_f))
}

/// Chain rule from the world ray direction to the camera's inverse focal length.
fn direction_inv_focal_grad(cam: &Camera, pixel: [f64; 2], g_v: &Vec3) -> f64 {
    let dc = cam.camera_direction(pixel[0], pixel[1]);
    let len = dc.norm();
    let n = dc / len;
    let g_n = cam.pose.rotation.transpose() * g_v;
    let g_dc = (g_n - n * n.dot(&g_n)) / len;
    g_dc.x * (pixel[0] - cam.width as f64 / 2.0) + g_dc.y * (pixel[1] - cam.height as f64 / 2.0)
}

struct ChunkResult {
    losses: Vec<RayLoss>,
    grads: Vec<f64>,
    g_inv_focal: f64,
}

fn evaluate(
    mix: &Mixture,
    batch: &RayBatch,
    cfg: &RenderConfig,
    weights: &LossWeights,
    with_grad: bool,
) -> Result<(LossOutput, Option<Gradient>)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty ray batch".into()));
    }
    weights.validate()?;
    let comps = kernel::prepare(&mix.components);
    let n_params = mix.len() * PARAMS_PER_COMPONENT;
    let scale = 1.0 / batch.len() as f64;
    let chunks: Vec<ChunkResult> = batch
        .records
        .par_chunks(CHUNK)
        .map(|recs| {
            let mut tr = Trace::default();
            let mut grads = if with_grad { vec![0.0; n_params] } else { Vec::new() };
            let mut g_f = 0.0;
            let losses = recs
                .iter()
                .map(|r| {
                    let g = with_grad.then_some((grads.as_mut_slice(), &mut g_f, scale));
                    ray_loss(r, &batch.cameras, &comps, cfg, weights, &mut tr, g)
                })
                .collect();
            ChunkResult {
                losses,
                grads,
                g_inv_focal: g_f,
            }
        })
        .collect();

    let mut terms = LossTerms::default();
    let mut per_ray = Vec::with_capacity(batch.len());
    let mut grads = vec![0.0; if with_grad { n_params } else { 0 }];
    let mut g_inv_focal = 0.0;
    for ch in &chunks {
        for l in &ch.losses {
            terms.mask += l.mask;
            terms.color += l.color;
            terms.flow += l.flow;
            per_ray.push(l.mask + weights.lambda_c * l.color + weights.lambda_f * l.flow);
        }
        for (g, c) in grads.iter_mut().zip(&ch.grads) {
            *g += c;
        }
        g_inv_focal += ch.g_inv_focal;
    }
    terms.mask *= scale;
    terms.color *= scale;
    terms.flow *= scale;
    terms.total = terms.mask + weights.lambda_c * terms.color + weights.lambda_f * terms.flow;
    if !terms.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {terms:?}")));
    }
    let gradient = if with_grad {
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        if !g_inv_focal.is_finite() {
            return Err(Error::NonFinite("inverse focal gradient".into()));
        }
        Some(Gradient {
            params: grads,
            inv_focal: g_inv_focal,
        })
    } else {
        None
    };
    Ok((LossOutput { terms, per_ray }, gradient))
}

/// Mean loss over the batch plus the per-ray weighted losses.
pub fn compute_loss(mix: &Mixture, batch: &RayBatch, cfg: &RenderConfig, weights: &LossWeights) -> Result<LossOutput> {
    evaluate(mix, batch, cfg, weights, false).map(|(l, _)| l)
}

pub fn loss_and_gradient(
    mix: &Mixture,
    batch: &RayBatch,
    cfg: &RenderConfig,
    weights: &LossWeights,
) -> Result<(LossOutput, Gradient)> {
    evaluate(mix, batch, cfg, weights, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

/// Single-ray helper for code that needs the loss of a ray outside a batch.
pub fn single_ray_loss(
    mix: &Mixture,
    rec: &RayRecord,
    cameras: &[Camera],
    cfg: &RenderConfig,
    weights: &LossWeights,
) -> f64 {
    let comps = kernel::prepare(&mix.components);
    let mut tr = Trace::default();
    let l = ray_loss(rec, cameras, &comps, cfg, weights, &mut tr, None);
    l.mask + weights.lambda_c * l.color + weights.lambda_f * l.flow
}
