//! Prune-and-split reparameterization between optimization rounds.

use std::f64::consts::FRAC_2_PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::fit::{compute_loss, sample_batch, LossWeights, RayBatch};
use crate::gmm::{Gaussian3D, Mat3, Mixture, Vec3};
use crate::render::{RenderConfig, Shader};
use crate::{Error, Result};

/// Relative slack on the selection thresholds, so values that sit on a
/// threshold up to rounding are treated as on it.
const THRESHOLD_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReparamConfig {
    pub z_prune: f64,
    pub z_split: f64,
    pub batch_fraction: f64,
    pub noise_sigma: f64,
}

impl Default for ReparamConfig {
    fn default() -> Self {
        Self {
            z_prune: 2.0,
            z_split: 1.0,
            batch_fraction: 0.05,
            noise_sigma: 0.1,
        }
    }
}

impl ReparamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.z_prune > 0.0
            && self.z_split > 0.0
            && self.batch_fraction > 0.0
            && self.batch_fraction <= 1.0
            && self.noise_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad reparameterization settings {self:?}")))
        }
    }
}

/// Population mean and standard deviation.
pub fn population_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Indices of components kept by the weight criterion: a component goes when
/// `λ_i ≤ μ_λ − z·σ_λ` and `σ_λ > 0`. At least one component always stays.
pub fn prune_indices(mix: &Mixture, z: f64) -> Vec<usize> {
    let all: Vec<usize> = (0..mix.len()).collect();
    if mix.len() < 2 {
        return all;
    }
    let w: Vec<f64> = mix.components.iter().map(Gaussian3D::weight).collect();
    let (mean, std) = population_stats(&w);
    if !(std > 0.0) {
        return all;
    }
    let cut = mean - z * std;
    let tol = THRESHOLD_TOL * mean.abs().max(std);
    let kept: Vec<usize> = all.iter().copied().filter(|&i| w[i] > cut + tol).collect();
    if kept.is_empty() {
        // keep the heaviest (lowest index on ties)
        let best = all.iter().copied().fold(0, |b, i| if w[i] > w[b] { i } else { b });
        return vec![best];
    }
    kept
}

pub fn prune(mix: &Mixture, z: f64) -> Mixture {
    let kept = prune_indices(mix, z);
    Mixture {
        components: kept.iter().map(|&i| mix.components[i].clone()).collect(),
        scene_scale: mix.scene_scale,
    }
}

/// `l̄_i = (1/M) Σ_j L_j · w_ij` with per-ray normalized blend weights.
pub fn per_gaussian_loss_from(mix_len: usize, per_ray: &[f64], weights: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let mut out = vec![0.0; mix_len];
    let m = per_ray.len() as f64;
    for (l, ws) in per_ray.iter().zip(weights) {
        for &(i, w) in ws {
            out[i] += l * w;
        }
    }
    for x in &mut out {
        *x /= m;
    }
    out
}

pub fn per_gaussian_loss(
    mix: &Mixture,
    batch: &RayBatch,
    cfg: &RenderConfig,
    weights: &LossWeights,
) -> Result<Vec<f64>> {
    let loss = compute_loss(mix, batch, cfg, weights)?;
    let mut shader = Shader::new(mix, cfg);
    let ray_weights: Vec<Vec<(usize, f64)>> = batch
        .records
        .iter()
        .map(|r| {
            shader.shade(&r.ray);
            shader.last_weights().filter(|&(_, w)| w > 0.0).collect()
        })
        .collect();
    Ok(per_gaussian_loss_from(mix.len(), &loss.per_ray, &ray_weights))
}

/// Indices with `l̄_i ≥ μ + z·σ` and `σ > 0`.
pub fn split_select(lbar: &[f64], z: f64) -> Result<Vec<usize>> {
    if lbar.is_empty() {
        return Err(Error::Invalid("no per-component losses to select from".into()));
    }
    let (mean, std) = population_stats(lbar);
    if !(std > 0.0) {
        return Ok(Vec::new());
    }
    let cut = mean + z * std;
    let tol = THRESHOLD_TOL * mean.abs().max(std);
    Ok((0..lbar.len()).filter(|&i| lbar[i] >= cut - tol).collect())
}

/// Dominant covariance eigenpair. Within a repeated top eigenvalue the
/// direction closest to the lowest-index coordinate axis is chosen; the sign
/// makes that axis coordinate positive.
pub fn dominant_axis(cov: &Mat3) -> Option<(f64, Vec3)> {
    let eig = cov.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) || !top.is_finite() || !(eig.eigenvalues.min() > 0.0) {
        return None;
    }
    let mut proj = Mat3::zeros();
    for k in 0..3 {
        if eig.eigenvalues[k] >= top * (1.0 - 1e-9) {
            let v = eig.eigenvectors.column(k).into_owned();
            proj += v * v.transpose();
        }
    }
    for axis in 0..3 {
        let p = proj.column(axis).into_owned();
        if p.norm() > 1e-6 {
            let v = p.normalize();
            return Some((top, if v[axis] < 0.0 { -v } else { v }));
        }
    }
    None
}

/// Splits `g` along its dominant axis into two children whose equal-weight
/// mixture keeps the parent's mean and covariance along that axis. Returns
/// `None` for degenerate covariances.
pub fn split_gaussian<R: Rng + ?Sized>(
    g: &Gaussian3D,
    noise_sigma: f64,
    rng: &mut R,
) -> Option<(Gaussian3D, Gaussian3D)> {
    let cov = g.covariance()?;
    let cov = (cov + cov.transpose()) * 0.5;
    let (lambda, v) = dominant_axis(&cov)?;
    let sigma = lambda.sqrt();
    let shift = v * (sigma * FRAC_2_PI.sqrt());
    let child_cov = cov - v * v.transpose() * (FRAC_2_PI * lambda);
    let mut make = |mean: Vec3| -> Option<Gaussian3D> {
        let mut c = Gaussian3D::from_covariance(mean, &child_cov, g.log_weight)?;
        c.color_raw = g.color_raw;
        if noise_sigma > 0.0 {
            let n = Normal::new(0.0, noise_sigma).ok()?;
            c.log_weight += n.sample(rng);
            for k in 0..3 {
                c.color_raw[k] += n.sample(rng);
            }
        }
        Some(c)
    };
    let a = make(g.mean + shift)?;
    let b = make(g.mean - shift)?;
    Some((a, b))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReparamReport {
    pub pruned: usize,
    pub split: usize,
}

/// Prune, then split. Returns the new mixture, the origin of each new
/// component (`None` for split children) and a summary.
pub fn reparam_round<R: Rng + ?Sized>(
    mix: &Mixture,
    dataset: &Dataset,
    cfg: &RenderConfig,
    weights: &LossWeights,
    rcfg: &ReparamConfig,
    rng: &mut R,
) -> Result<(Mixture, Vec<Option<usize>>, ReparamReport)> {
    let total = dataset.ray_count();
    let size = ((total as f64 * rcfg.batch_fraction).round() as usize).clamp(1, total);
    let batch = sample_batch(dataset, size, rng)?;
    let lbar = per_gaussian_loss(mix, &batch, cfg, weights)?;
    let kept = prune_indices(mix, rcfg.z_prune);
    let kept_lbar: Vec<f64> = kept.iter().map(|&i| lbar[i]).collect();
    let selected = split_select(&kept_lbar, rcfg.z_split)?;
    let mut comps = Vec::with_capacity(kept.len() + selected.len());
    let mut origin = Vec::with_capacity(kept.len() + selected.len());
    let mut extra = Vec::new();
    let mut split = 0;
    for (k, &i) in kept.iter().enumerate() {
        let g = &mix.components[i];
        if selected.binary_search(&k).is_ok() {
            if let Some((a, b)) = split_gaussian(g, rcfg.noise_sigma, rng) {
                comps.push(a);
                origin.push(None);
                extra.push(b);
                split += 1;
                continue;
            }
        }
        comps.push(g.clone());
        origin.push(Some(i));
    }
    origin.extend(std::iter::repeat_n(None, extra.len()));
    comps.extend(extra);
    let report = ReparamReport {
        pruned: mix.len() - kept.len(),
        split,
    };
    Ok((
        Mixture {
            components: comps,
            scene_scale: mix.scene_scale,
        },
        origin,
        report,
    ))
}
