//! Synthetic ground-truth scenes with exact depth and flow.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::camera::{Camera, Pose};
use crate::dataset::{linear_to_srgb8, srgb8_to_linear, write_dataset, Dataset, Frame};
use crate::formats::{mixture::write_mixture, pfm};
use crate::gmm::{Gaussian3D, Mat3, Mixture, Vec3};
use crate::render::{render_maps, BlendMode, FlowField, RenderConfig, FLOW_ALPHA_CUTOFF, FLOW_INVALID};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// Random anisotropic blobs around the origin.
    Blobs,
    /// A bowl: flattened components on the lower half of a sphere, opening
    /// upwards towards elevated cameras.
    Bowl,
    /// Thin opaque disks tangent to a sphere of radius 0.3.
    Sphere,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SceneKind::Blobs),
            "bowl" | "concave" => Ok(SceneKind::Bowl),
            "sphere" => Ok(SceneKind::Sphere),
            _ => Err(Error::Invalid(format!("unknown scene kind `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub kind: SceneKind,
    pub components: usize,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Half field of view, as the tangent at the image border (shorter side).
    pub half_fov_tan: f64,
    /// Camera elevation range in radians, swept sinusoidally along the orbit.
    pub elevation: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::Blobs,
            components: 5,
            views: 24,
            width: 96,
            height: 96,
            seed: 0,
            half_fov_tan: 0.6,
            elevation: (-0.35, 0.35),
        }
    }
}

/// A generated scene with its held-out ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub dataset: Dataset,
    pub mixture: Mixture,
    /// Ground-truth composited depth per frame (`+∞` on background).
    pub depth: Vec<Vec<f64>>,
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(0.0..TAU);
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vec3::from(axis)), angle).matrix()
}

fn color<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Component flattened along `normal` (std `thin`) with in-plane std `wide`.
fn disk(center: Vec3, normal: Vec3, wide: f64, thin: f64, log_weight: f64) -> Gaussian3D {
    let n = normal.normalize();
    let cov = Mat3::identity() * (wide * wide) + n * n.transpose() * (thin * thin - wide * wide);
    Gaussian3D::from_covariance(center, &cov, log_weight).expect("positive definite")
}

fn fibonacci_sphere(i: usize, n: usize) -> Vec3 {
    let golden = PI * (3.0 - 5f64.sqrt());
    let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
    let r = (1.0 - y * y).sqrt();
    let a = golden * i as f64;
    Vec3::new(r * a.cos(), y, r * a.sin())
}

pub fn ground_truth_mixture(kind: SceneKind, n: usize, rng: &mut ChaCha8Rng) -> Result<Mixture> {
    if n == 0 {
        return Err(Error::Invalid("scene needs at least one component".into()));
    }
    let comps = match kind {
        SceneKind::Blobs => (0..n)
            .map(|_| {
                let mean = Vec3::from(UnitSphere.sample(rng)) * rng.random_range(0.0..0.2);
                let rot = random_rotation(rng);
                let s = Vec3::new(
                    rng.random_range(0.06..0.16),
                    rng.random_range(0.06..0.16),
                    rng.random_range(0.06..0.16),
                );
                let cov = rot * Mat3::from_diagonal(&s.component_mul(&s)) * rot.transpose();
                let mut g = Gaussian3D::from_covariance(mean, &cov, rng.random_range(2.0..3.0)).expect("SPD");
                g.color_raw = color(rng);
                g
            })
            .collect(),
        SceneKind::Bowl => {
            // world −y is up, so y > 0 is the lower half
            let radius = 0.3;
            let mut out = Vec::with_capacity(n);
            let mut i = 0;
            let total = 2 * n + 1;
            while out.len() < n && i < 4 * total {
                let p = fibonacci_sphere(i % total, total);
                i += 1;
                if p.y < 0.05 {
                    continue;
                }
                let mut g = disk(p * radius, p, 0.09, 0.025, 2.5);
                g.color_raw = color(rng);
                out.push(g);
            }
            out
        }
        SceneKind::Sphere => {
            let radius = 0.3;
            let spacing = radius * (4.0 * PI / n as f64).sqrt();
            (0..n)
                .map(|i| {
                    let p = fibonacci_sphere(i, n);
                    let mut g = disk(p * radius, p, 0.3 * spacing, 0.005, 5.0);
                    g.color_raw = color(rng);
                    g
                })
                .collect()
        }
    };
    Mixture::new(comps, 1.0)
}

/// Cameras on a unit orbit around the origin, looking at it. World `−y` is up.
pub fn orbit_cameras(spec: &SynthSpec) -> Result<Vec<Camera>> {
    if spec.views == 0 {
        return Err(Error::Invalid("at least one view is required".into()));
    }
    let inv_focal = spec.half_fov_tan / (spec.width.min(spec.height) as f64 / 2.0);
    let (lo, hi) = spec.elevation;
    (0..spec.views)
        .map(|i| {
            let a = i as f64 / spec.views as f64 * TAU;
            let el = 0.5 * (lo + hi) + 0.5 * (hi - lo) * (2.0 * a).sin();
            let eye = Vec3::new(el.cos() * a.cos(), -el.sin(), el.cos() * a.sin());
            let look = Pose::look_at(eye, Vec3::zeros(), Vec3::new(0.0, -1.0, 0.0));
            // go through the quaternion so the text pose file reloads bit-exactly
            let pose = Pose::from_quaternion(look.quaternion_wxyz(), eye)?;
            Camera::new(pose, inv_focal, spec.width, spec.height)
        })
        .collect()
}

/// Exact pixel flow of `depth` (seen from `src`) into `dst`, from the pose
/// geometry alone. `None` where the depth is missing, alpha is below the
/// flow cutoff or the point falls behind `dst`.
pub fn exact_flow(src: &Camera, dst: &Camera, depth: &[f64], alpha: &[f64]) -> Vec<Option<[f64; 2]>> {
    let (w, h) = (src.width, src.height);
    let mut data = vec![None; w * h];
    // dst pixel = K · R_dstᵀ · (C_src + t·R_src·d̂ − C_dst)
    let rel_rot = dst.pose.rotation.transpose() * src.pose.rotation;
    let rel_t = dst.pose.rotation.transpose() * (src.pose.translation - dst.pose.translation);
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            if !depth[k].is_finite() || alpha[k] < FLOW_ALPHA_CUTOFF {
                continue;
            }
            let (u, v) = (c as f64 + 0.5, r as f64 + 0.5);
            let dir = Vec3::new(
                (u - w as f64 / 2.0) * src.inv_focal,
                (v - h as f64 / 2.0) * src.inv_focal,
                1.0,
            );
            let p = rel_rot * (dir / dir.norm() * depth[k]) + rel_t;
            if p.z <= 0.0 {
                continue;
            }
            let pu = p.x / p.z / dst.inv_focal + dst.width as f64 / 2.0;
            let pv = p.y / p.z / dst.inv_focal + dst.height as f64 / 2.0;
            data[k] = Some([pu - u, pv - v]);
        }
    }
    data
}

pub fn flow_from_depth(src: &Camera, dst: &Camera, depth: &[f64], alpha: &[f64]) -> FlowField {
    let data = exact_flow(src, dst, depth, alpha)
        .into_iter()
        .map(|f| f.map_or([FLOW_INVALID; 2], |f| [f[0] as f32, f[1] as f32]))
        .collect();
    FlowField::new(src.width, src.height, data)
}

pub fn synth_scene(spec: &SynthSpec) -> Result<SynthScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mixture = ground_truth_mixture(spec.kind, spec.components, &mut rng)?;
    let cameras = orbit_cameras(spec)?;
    let cfg = RenderConfig::with_mode(BlendMode::AlphaComposited).for_mixture(&mixture);
    let maps: Vec<_> = cameras.iter().map(|c| render_maps(c, &mixture, &cfg)).collect();
    let n = cameras.len();
    let mut frames = Vec::with_capacity(n);
    for (i, m) in maps.iter().enumerate() {
        let flow = |j: usize| flow_from_depth(&cameras[i], &cameras[j], &m.depth, &m.alpha);
        let quant = |x: f64| srgb8_to_linear(linear_to_srgb8(x));
        frames.push(Frame {
            name: format!("{i:04}"),
            color: m.color.iter().map(|c| c.map(quant)).collect(),
            mask: m.alpha.iter().map(|&a| if a >= 0.5 { 1.0 } else { 0.0 }).collect(),
            flow_fwd: (i + 1 < n).then(|| flow(i + 1)),
            flow_bwd: (i > 0).then(|| flow(i - 1)),
        });
    }
    Ok(SynthScene {
        dataset: Dataset::new(frames, cameras)?,
        mixture,
        depth: maps.into_iter().map(|m| m.depth).collect(),
    })
}

/// Writes the dataset plus `gt_mixture.fmb` and `gt_depth/<name>.pfm`.
pub fn write_synth(scene: &SynthScene, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    write_dataset(&scene.dataset, root)?;
    write_mixture(root.join("gt_mixture.fmb"), &scene.mixture)?;
    let dir = root.join("gt_depth");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (f, d) in scene.dataset.frames.iter().zip(&scene.depth) {
        let c = &scene.dataset.cameras[0];
        let data: Vec<f32> = d.iter().map(|&x| x as f32).collect();
        pfm::write_pfm(dir.join(format!("{}.pfm", f.name)), c.width, c.height, &data)?;
    }
    Ok(())
}

/// Reads the ground-truth depth maps written by [`write_synth`].
pub fn read_gt_depth(root: impl AsRef<Path>, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let root = root.as_ref();
    dataset
        .frames
        .iter()
        .map(|f| {
            let (_, _, d) = pfm::read_pfm(root.join("gt_depth").join(format!("{}.pfm", f.name)))?;
            Ok(d.into_iter().map(f64::from).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;
    use crate::render::{render_flow, reproject_flow};

    fn small(kind: SceneKind, components: usize) -> SynthSpec {
        SynthSpec {
            kind,
            components,
            views: 6,
            width: 32,
            height: 24,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn single_component_is_one_blob() {
        let s = synth_scene(&small(SceneKind::Blobs, 1)).unwrap();
        for f in &s.dataset.frames {
            let (w, h) = (32, 24);
            let on: Vec<usize> = (0..w * h).filter(|&k| f.mask[k] > 0.5).collect();
            assert!(!on.is_empty());
            // 4-connected flood fill covers every foreground pixel
            let mut seen = vec![false; w * h];
            let mut stack = vec![on[0]];
            seen[on[0]] = true;
            let mut count = 0;
            while let Some(k) = stack.pop() {
                count += 1;
                let (c, r) = (k % w, k / w);
                let mut push = |cc: usize, rr: usize| {
                    let j = rr * w + cc;
                    if f.mask[j] > 0.5 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if c > 0 {
                    push(c - 1, r)
                }
                if c + 1 < w {
                    push(c + 1, r)
                }
                if r > 0 {
                    push(c, r - 1)
                }
                if r + 1 < h {
                    push(c, r + 1)
                }
            }
            assert_eq!(count, on.len());
        }
    }

    #[test]
    fn flow_matches_renderer() {
        let spec = small(SceneKind::Blobs, 4);
        let s = synth_scene(&spec).unwrap();
        let cfg = RenderConfig::with_mode(BlendMode::AlphaComposited).for_mixture(&s.mixture);
        let cams = &s.dataset.cameras;
        let exact = exact_flow(
            &cams[2],
            &cams[3],
            &s.depth[2],
            &render_maps(&cams[2], &s.mixture, &cfg).alpha,
        );
        let mut shader = crate::render::Shader::new(&s.mixture, &cfg);
        let mut valid = 0;
        for (k, e) in exact.iter().enumerate() {
            let (c, r) = (k % spec.width, k / spec.width);
            let ray = cams[2].pixel_ray(c, r);
            let res = shader.shade(&ray);
            let (u, v) = (c as f64 + 0.5, r as f64 + 0.5);
            let rendered = (!res.is_background() && res.alpha >= FLOW_ALPHA_CUTOFF)
                .then(|| reproject_flow(&cams[3], &ray.at(res.t_final), u, v))
                .flatten();
            assert_eq!(e.is_some(), rendered.is_some());
            if let (Some(a), Some(b)) = (e, rendered) {
                assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6, "{a:?} {b:?}");
                valid += 1;
            }
        }
        assert!(valid > 0);
        // the stored field is the same flow in f32
        let stored = s.dataset.frames[2].flow_fwd.as_ref().unwrap();
        let fl = render_flow(&cams[2], Some(&cams[1]), Some(&cams[3]), &s.mixture, &cfg).unwrap();
        assert_eq!(stored.data.len(), fl.forward.unwrap().data.len());
    }

    #[test]
    fn deterministic_and_reloads_losslessly() {
        let spec = small(SceneKind::Bowl, 8);
        let a = synth_scene(&spec).unwrap();
        assert_eq!(a, synth_scene(&spec).unwrap());
        let dir = tempfile::tempdir().unwrap();
        write_synth(&a, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, a.dataset);
        let depth = read_gt_depth(dir.path(), &back).unwrap();
        for (x, y) in depth.iter().flatten().zip(a.depth.iter().flatten()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
}
