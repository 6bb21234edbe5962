//! Gradient verification against central finite differences.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::camera::{Camera, Pose};
use crate::fit::{compute_loss, loss_and_gradient, Gradient, LossWeights, RayBatch, RayRecord};
use crate::gmm::{sigmoid, Gaussian3D, Mat3, Mixture, Vec3, PARAMS_PER_COMPONENT};
use crate::render::{reproject_flow, BlendMode, RenderConfig, Shader};
use crate::Result;

pub use crate::fit::loss_and_gradient as loss_gradient;

/// Relative step used by [`finite_difference_oracle`]: `h = H_REL·max(1, |θ|)`
/// for mixture parameters and `H_REL·f` for the inverse focal length `f`.
pub const H_REL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// `(f(x + h) − f(x − h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

const FIELD_NAMES: [&str; PARAMS_PER_COMPONENT] = [
    "mean.x",
    "mean.y",
    "mean.z",
    "u00",
    "u01",
    "u02",
    "u10",
    "u11",
    "u12",
    "u20",
    "u21",
    "u22",
    "log_weight",
    "color.r",
    "color.g",
    "color.b",
];

pub fn parameter_name(index: usize) -> String {
    format!(
        "g{}.{}",
        index / PARAMS_PER_COMPONENT,
        FIELD_NAMES[index % PARAMS_PER_COMPONENT]
    )
}

/// Numeric gradient of the mean batch loss, including the shared inverse
/// focal length (taken from the first camera and applied to all).
pub fn finite_difference_oracle(
    mix: &Mixture,
    batch: &RayBatch,
    cfg: &RenderConfig,
    weights: &LossWeights,
    h_rel: f64,
) -> Result<Gradient> {
    assert!(h_rel > 0.0, "finite difference step must be positive");
    let base = mix.to_params();
    let mut params = Vec::with_capacity(base.len());
    let mut p = base.clone();
    for i in 0..base.len() {
        let h = h_rel * base[i].abs().max(1.0);
        let mut eval = |x: f64| -> Result<f64> {
            p[i] = x;
            let m = Mixture::from_params(&p, mix.scene_scale);
            compute_loss(&m, batch, cfg, weights).map(|l| l.total())
        };
        let plus = eval(base[i] + h)?;
        let minus = eval(base[i] - h)?;
        p[i] = base[i];
        params.push((plus - minus) / (2.0 * h));
    }
    // the inverse focal length is a small positive scale, so its step is
    // relative to its own magnitude
    let f0 = batch.cameras[0].inv_focal;
    let h = h_rel * f0.abs();
    let eval = |f: f64| compute_loss(mix, &batch.with_inv_focal(f), cfg, weights).map(|l| l.total());
    let inv_focal = (eval(f0 + h)? - eval(f0 - h)?) / (2.0 * h);
    Ok(Gradient { params, inv_focal })
}

/// One report line per scalar parameter plus one for the inverse focal length.
pub fn gradient_reports(
    mix: &Mixture,
    batch: &RayBatch,
    cfg: &RenderConfig,
    weights: &LossWeights,
) -> Result<Vec<GradientReport>> {
    let (_, analytic) = loss_and_gradient(mix, batch, cfg, weights)?;
    let numeric = finite_difference_oracle(mix, batch, cfg, weights, H_REL)?;
    let mut out: Vec<GradientReport> = analytic
        .params
        .iter()
        .zip(&numeric.params)
        .enumerate()
        .map(|(i, (&a, &n))| GradientReport {
            parameter: parameter_name(i),
            analytic: a,
            numeric: n,
            rel_error: rel_error(a, n),
        })
        .collect();
    out.push(GradientReport {
        parameter: "inv_focal".into(),
        analytic: analytic.inv_focal,
        numeric: numeric.inv_focal,
        rel_error: rel_error(analytic.inv_focal, numeric.inv_focal),
    });
    Ok(out)
}

/// A random scene with its ray batch, built to keep away from the
/// non-differentiable configurations (sort ties, clip boundary, background).
#[derive(Clone, Debug)]
pub struct CheckScene {
    pub mixture: Mixture,
    pub batch: RayBatch,
    pub config: RenderConfig,
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vec3::from(axis)), angle).matrix()
}

fn random_component<R: Rng + ?Sized>(rng: &mut R) -> Gaussian3D {
    let mean = Vec3::from(UnitSphere.sample(rng)) * rng.random_range(0.0..0.4);
    let rot = random_rotation(rng);
    let inv_s = Vec3::new(
        1.0 / rng.random_range(0.15..0.45),
        1.0 / rng.random_range(0.15..0.45),
        1.0 / rng.random_range(0.15..0.45),
    );
    let mut root = rot * Mat3::from_diagonal(&inv_s) * rot.transpose();
    // break symmetry so the unconstrained parameterization is exercised
    for v in root.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v += 0.3 * n;
    }
    let color = Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    );
    Gaussian3D::new(mean, root, rng.random_range(-1.5..0.5), color)
}

fn check_cameras() -> Vec<Camera> {
    [-0.4f64, 0.0, 0.35]
        .iter()
        .map(|&a| {
            let eye = Vec3::new(3.0 * a.sin(), 0.3 * a, -3.0 * a.cos());
            let pose = Pose::look_at(eye, Vec3::new(0.05, -0.02, 0.0), Vec3::new(0.0, -1.0, 0.0));
            Camera::new(pose, 0.011, 64, 48).expect("valid camera")
        })
        .collect()
}

/// Residuals closer to zero than this are treated as sitting on an L1 kink.
const KINK_MARGIN: f64 = 1e-3;

fn ray_is_well_posed(mix: &Mixture, rec: &RayRecord, cameras: &[Camera], shader: &mut Shader) -> bool {
    let res = shader.shade(&rec.ray);
    if res.is_background() || !(res.alpha > 1e-4 && res.alpha < 1.0 - 1e-4) {
        return false;
    }
    if (res.color - rec.target_color).iter().any(|d| d.abs() < KINK_MARGIN) {
        return false;
    }
    let x = rec.ray.at(res.t_final);
    let scale = cameras[rec.frame].flow_scale();
    for (target, adj) in [(rec.flow_fwd, rec.frame + 1), (rec.flow_bwd, rec.frame.wrapping_sub(1))] {
        let (Some(target), Some(cam)) = (target, cameras.get(adj)) else {
            continue;
        };
        let Some(f) = reproject_flow(cam, &x, rec.pixel[0], rec.pixel[1]) else {
            return false;
        };
        if (0..2).any(|k| (f[k] / scale - target[k]).abs() < KINK_MARGIN) {
            return false;
        }
    }
    let mut ts: Vec<f64> = mix
        .components
        .iter()
        .map(|g| crate::gmm::ray_intersection_t(&rec.ray, g))
        .collect();
    if ts.iter().any(|t| t.abs() < 0.05) {
        return false;
    }
    ts.sort_by(f64::total_cmp);
    let tie = 1e-4 * mix.scene_scale;
    !ts.windows(2).any(|w| w[1] - w[0] < tie)
}

fn random_record<R: Rng + ?Sized>(rng: &mut R, cameras: &[Camera]) -> RayRecord {
    let frame = rng.random_range(0..cameras.len());
    let cam = &cameras[frame];
    let u = rng.random_range(16.0..48.0);
    let v = rng.random_range(12.0..36.0);
    let flow = |rng: &mut R| -> Option<[f64; 2]> {
        if rng.random_bool(0.8) {
            Some([rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)])
        } else {
            None
        }
    };
    let (fwd, bwd) = (flow(rng), flow(rng));
    let mut channel = || sigmoid(StandardNormal.sample(rng));
    let target_color = Vec3::new(channel(), channel(), channel());
    RayRecord {
        frame,
        pixel: [u, v],
        ray: cam.generate_ray(u, v),
        target_alpha: rng.random_range(0.05..0.95),
        target_color,
        flow_fwd: if frame + 1 < cameras.len() { fwd } else { None },
        flow_bwd: if frame > 0 { bwd } else { None },
    }
}

/// Draws a scene and rays until every ray is well posed: in front of all
/// components, no near-ties in depth, alpha strictly inside the clip range.
/// Targets keep alpha strictly inside (0, 1) and colors/flows generic.
pub fn random_scene<R: Rng + ?Sized>(rng: &mut R, components: usize, rays: usize, mode: BlendMode) -> CheckScene {
    let config = RenderConfig::with_mode(mode);
    let cameras = check_cameras();
    'scene: loop {
        let mix = Mixture::new((0..components).map(|_| random_component(rng)).collect(), 1.0).expect("unit scale");
        if !mix.degenerate_components().is_empty() {
            continue;
        }
        let mut shader = Shader::new(&mix, &config);
        let mut records = Vec::with_capacity(rays);
        while records.len() < rays {
            let mut attempts = 0;
            let rec = loop {
                let rec = random_record(rng, &cameras);
                if ray_is_well_posed(&mix, &rec, &cameras, &mut shader) {
                    break rec;
                }
                attempts += 1;
                if attempts > 1000 {
                    continue 'scene;
                }
            };
            records.push(rec);
        }
        return CheckScene {
            mixture: mix,
            batch: RayBatch::new(records, cameras),
            config,
        };
    }
}

/// Summary of a gradient sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub scenes: usize,
    pub entries: usize,
    pub p99: f64,
    pub max: f64,
    pub worst: Option<GradientReport>,
}

/// Checks `scenes` random scenes with 3–10 components and 32–128 rays,
/// alternating weighted and composited blending.
pub fn gradient_sweep<R: Rng + ?Sized>(rng: &mut R, scenes: usize, weights: &LossWeights) -> Result<SweepSummary> {
    let mut errors = Vec::new();
    let mut worst: Option<GradientReport> = None;
    for s in 0..scenes {
        let mode = if s % 2 == 0 {
            BlendMode::Weighted2
        } else {
            BlendMode::AlphaComposited
        };
        let n = rng.random_range(3..=10);
        let m = rng.random_range(32..=128);
        let scene = random_scene(rng, n, m, mode);
        for r in gradient_reports(&scene.mixture, &scene.batch, &scene.config, weights)? {
            if worst.as_ref().is_none_or(|w| r.rel_error > w.rel_error) {
                worst = Some(r.clone());
            }
            errors.push(r.rel_error);
        }
    }
    errors.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        if errors.is_empty() {
            0.0
        } else {
            errors[((errors.len() - 1) as f64 * q).ceil() as usize]
        }
    };
    Ok(SweepSummary {
        scenes,
        entries: errors.len(),
        p99: pick(0.99),
        max: pick(1.0),
        worst,
    })
}
