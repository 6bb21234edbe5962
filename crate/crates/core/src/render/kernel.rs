//! Per-ray forward shading with hand-derived adjoints.
//!
//! The forward pass records, for every component that takes part in the
//! blend, the quantities the backward pass needs. Component math in terms of
//! `a = Uv`, `b = U(μ−o)` and `e = a·t − b`:
//!
//! ```text
//! t = a·b / a·a        d = −½|e|² + log λ        δ = exp(d)
//! ```
//!
//! Because `t` maximizes `d` along the ray, `∂d/∂t = 0` there and the
//! derivative of `d` with respect to `(a, b)` at fixed `t` is exact.

use crate::gmm::{sigmoid, Gaussian3D, Mat3, Ray, Vec3, PARAMS_PER_COMPONENT};
use crate::render::{BlendMode, RenderConfig};

/// Component data that is constant for a whole batch of rays.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub mean: Vec3,
    pub root: Mat3,
    pub root_t: Mat3,
    pub log_weight: f64,
    pub color: Vec3,
}

impl Prepared {
    pub fn new(g: &Gaussian3D) -> Self {
        Self {
            mean: g.mean,
            root: g.root_precision,
            root_t: g.root_precision.transpose(),
            log_weight: g.log_weight,
            color: g.color(),
        }
    }
}

pub(crate) fn prepare(components: &[Gaussian3D]) -> Vec<Prepared> {
    components.iter().map(Prepared::new).collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Hit {
    pub idx: usize,
    pub t: f64,
    pub d: f64,
    pub delta: f64,
    pub a: Vec3,
    pub b: Vec3,
    pub e: Vec3,
    /// Weighted modes: blend exponent. Composited: transmission before this hit.
    pub aux: f64,
    /// Normalized blend weight.
    pub w: f64,
}

/// Scratch space and results for one ray.
#[derive(Clone, Debug, Default)]
pub(crate) struct Trace {
    pub hits: Vec<Hit>,
    pub background: bool,
    pub t_final: f64,
    pub alpha: f64,
    pub color: Vec3,
    pub max_weight: f64,
    pub sum_delta: f64,
    /// Sum of raw (unnormalized) weights; composited mode only.
    pub weight_sum: f64,
}

#[inline]
fn component_hit(ray: &Ray, p: &Prepared, idx: usize) -> Hit {
    let a = p.root * ray.direction;
    let b = p.root * (p.mean - ray.origin);
    let t = a.dot(&b) / a.dot(&a);
    let e = a * t - b;
    let d = -0.5 * e.norm_squared() + p.log_weight;
    Hit {
        idx,
        t,
        d,
        delta: d.exp(),
        a,
        b,
        e,
        aux: 0.0,
        w: 0.0,
    }
}

pub(crate) fn trace_ray(ray: &Ray, comps: &[Prepared], cfg: &RenderConfig, tr: &mut Trace) {
    tr.hits.clear();
    match cfg.mode {
        BlendMode::Weighted2 => {
            for (i, p) in comps.iter().enumerate() {
                let h = component_hit(ray, p, i);
                if h.t > 0.0 {
                    tr.hits.push(h);
                }
            }
            weighted_blend(cfg, tr, false);
        }
        BlendMode::Weighted5 => {
            for (i, p) in comps.iter().enumerate() {
                tr.hits.push(component_hit(ray, p, i));
            }
            weighted_blend(cfg, tr, true);
        }
        BlendMode::AlphaComposited => {
            for (i, p) in comps.iter().enumerate() {
                let h = component_hit(ray, p, i);
                if h.t > 0.0 {
                    tr.hits.push(h);
                }
            }
            composite(tr);
        }
    }
    if !tr.background {
        let mut color = Vec3::zeros();
        let mut t_final = 0.0;
        let mut max_w = 0.0f64;
        for h in &tr.hits {
            t_final += h.w * h.t;
            color += comps[h.idx].color * h.w;
            max_w = max_w.max(h.w);
        }
        tr.t_final = t_final;
        tr.color = color;
        tr.max_weight = max_w;
    } else {
        tr.t_final = f64::INFINITY;
        tr.color = Vec3::zeros();
        tr.max_weight = 0.0;
    }
}

fn weighted_blend(cfg: &RenderConfig, tr: &mut Trace, five: bool) {
    let [b1, b2, b3, b4, b5] = cfg.beta;
    let eta = cfg.eta;
    let mut max_s = f64::NEG_INFINITY;
    let mut sum_delta = 0.0;
    for h in tr.hits.iter_mut() {
        let s = if five {
            b1 * h.d * sigmoid(b3 * h.t / eta) - b2 * h.t / eta
        } else {
            b1 * h.d - b2 * h.t / eta
        };
        h.aux = s;
        max_s = max_s.max(s);
        sum_delta += h.delta;
    }
    tr.sum_delta = sum_delta;
    tr.alpha = if five {
        sigmoid(b4 * sum_delta + b5)
    } else {
        -(-sum_delta).exp_m1()
    };
    let mut z = 0.0;
    for h in tr.hits.iter_mut() {
        h.w = (h.aux - max_s).exp();
        z += h.w;
    }
    // weights are normalized in the shifted domain, so only a ray with no
    // density anywhere is background, as in compositing
    tr.background = tr.hits.is_empty() || !(sum_delta > 0.0);
    if tr.background {
        for h in tr.hits.iter_mut() {
            h.w = 0.0;
        }
    } else {
        for h in tr.hits.iter_mut() {
            h.w /= z;
        }
    }
}

fn composite(tr: &mut Trace) {
    tr.hits
        .sort_unstable_by(|x, y| x.t.total_cmp(&y.t).then(x.idx.cmp(&y.idx)));
    let mut prefix = 0.0f64;
    let mut total = 0.0;
    for h in tr.hits.iter_mut() {
        let trans = (-prefix).exp();
        h.aux = trans;
        h.w = trans * -(-h.delta).exp_m1();
        total += h.w;
        prefix += h.delta;
    }
    tr.sum_delta = prefix;
    tr.weight_sum = total;
    tr.alpha = total;
    tr.background = !(total > 0.0);
    for h in tr.hits.iter_mut() {
        h.w = if tr.background { 0.0 } else { h.w / total };
    }
}

/// Blended unit normal at the rendered point `o + t_f·v`.
///
/// Each component contributes `Σ⁻¹(x − μ)` normalized and turned towards the
/// camera; a component whose mean coincides with `x` contributes `−v`.
pub(crate) fn blended_normal(ray: &Ray, comps: &[Prepared], tr: &Trace) -> Vec3 {
    if tr.background {
        return Vec3::zeros();
    }
    let mut acc = Vec3::zeros();
    for h in &tr.hits {
        let n = local_normal(ray, &comps[h.idx], h, tr.t_final);
        acc += n * h.w;
    }
    let norm = acc.norm();
    if norm > 1e-300 {
        acc / norm
    } else {
        -ray.direction
    }
}

#[inline]
fn local_normal(ray: &Ray, p: &Prepared, h: &Hit, t: f64) -> Vec3 {
    let n = p.root_t * (h.a * t - h.b);
    let len = n.norm();
    if !(len > 1e-300) {
        return -ray.direction;
    }
    let n = n / len;
    if n.dot(&ray.direction) > 0.0 {
        -n
    } else {
        n
    }
}

/// Accumulates parameter gradients for one traced ray given upstream
/// gradients of the blended depth, color and alpha. Returns the gradient
/// with respect to the ray direction.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backprop(
    ray: &Ray,
    comps: &[Prepared],
    cfg: &RenderConfig,
    tr: &Trace,
    g_t_final: f64,
    g_color: &Vec3,
    g_alpha: f64,
    grads: &mut [f64],
) -> Vec3 {
    let [b1, b2, b3, b4, _] = cfg.beta;
    let eta = cfg.eta;
    let blended = !tr.background;
    let (g_tf, g_c) = if blended {
        (g_t_final, *g_color)
    } else {
        (0.0, Vec3::zeros())
    };
    let mut g_dir = Vec3::zeros();
    let mut h_bar = 0.0;
    if blended {
        for h in &tr.hits {
            h_bar += h.w * (g_tf * h.t + g_c.dot(&comps[h.idx].color));
        }
    }
    match cfg.mode {
        BlendMode::Weighted2 | BlendMode::Weighted5 => {
            let five = cfg.mode == BlendMode::Weighted5;
            let alpha_slope = if five {
                tr.alpha * (1.0 - tr.alpha) * b4
            } else {
                (-tr.sum_delta).exp()
            };
            for h in &tr.hits {
                let p = &comps[h.idx];
                let g_s = if blended {
                    h.w * (g_tf * h.t + g_c.dot(&p.color) - h_bar)
                } else {
                    0.0
                };
                let (g_t, g_d) = if five {
                    let sig = sigmoid(b3 * h.t / eta);
                    let ds_dt = b1 * h.d * sig * (1.0 - sig) * b3 / eta - b2 / eta;
                    (
                        g_tf * h.w + g_s * ds_dt,
                        g_s * b1 * sig + g_alpha * alpha_slope * h.delta,
                    )
                } else {
                    (g_tf * h.w - g_s * b2 / eta, g_s * b1 + g_alpha * alpha_slope * h.delta)
                };
                g_dir += component_backprop(ray, p, h, g_t, g_d, &(g_c * h.w), grads);
            }
        }
        BlendMode::AlphaComposited => {
            let total = tr.weight_sum;
            // suffix sum of Gw_k · w_k (raw weights) over later hits
            let mut suffix = 0.0;
            for h in tr.hits.iter().rev() {
                let p = &comps[h.idx];
                let raw_w = h.w * total;
                let g_w = if blended {
                    (g_tf * h.t + g_c.dot(&p.color) - h_bar) / total + g_alpha
                } else {
                    g_alpha
                };
                let trans_after = h.aux * (-h.delta).exp();
                let g_delta = g_w * trans_after - suffix;
                suffix += g_w * raw_w;
                let g_t = g_tf * h.w;
                let g_d = g_delta * h.delta;
                g_dir += component_backprop(ray, p, h, g_t, g_d, &(g_c * h.w), grads);
            }
        }
    }
    g_dir
}

#[inline]
fn component_backprop(ray: &Ray, p: &Prepared, h: &Hit, g_t: f64, g_d: f64, g_color: &Vec3, grads: &mut [f64]) -> Vec3 {
    let inv_aa = 1.0 / h.a.norm_squared();
    let g_a = (h.b - h.a * (2.0 * h.t)) * (g_t * inv_aa) - h.e * (g_d * h.t);
    let g_b = h.a * (g_t * inv_aa) + h.e * g_d;
    let m = p.mean - ray.origin;
    let v = ray.direction;
    let out = &mut grads[h.idx * PARAMS_PER_COMPONENT..(h.idx + 1) * PARAMS_PER_COMPONENT];
    let g_mean = p.root_t * g_b;
    out[0] += g_mean.x;
    out[1] += g_mean.y;
    out[2] += g_mean.z;
    for r in 0..3 {
        for c in 0..3 {
            out[3 + 3 * r + c] += g_a[r] * v[c] + g_b[r] * m[c];
        }
    }
    out[12] += g_d;
    for ch in 0..3 {
        let c = p.color[ch];
        out[13 + ch] += g_color[ch] * c * (1.0 - c);
    }
    p.root_t * g_a
}
