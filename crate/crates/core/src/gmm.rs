//! Gaussian mixture representation and per-component ray math.
//!
//! Each component stores a mean, a root precision `U` (precision = `UᵀU`),
//! a log-weight and an unconstrained color. Rays hit a component at the
//! point of maximum density along the ray, and the unnormalized log-density
//! there drives every blending mode in [`crate::render`].

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Number of scalar parameters per component: mean (3), root precision (9),
/// log-weight (1), raw color (3).
pub const PARAMS_PER_COMPONENT: usize = 16;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One mixture component.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vec3,
    /// `Σ^(-1/2)` in product form; need not be symmetric.
    pub root_precision: Mat3,
    pub log_weight: f64,
    /// Displayed color is `sigmoid(color_raw)` per channel.
    pub color_raw: Vec3,
}

impl Gaussian3D {
    pub fn new(mean: Vec3, root_precision: Mat3, log_weight: f64, color_raw: Vec3) -> Self {
        Self {
            mean,
            root_precision,
            log_weight,
            color_raw,
        }
    }

    /// Isotropic component with standard deviation `std`.
    pub fn isotropic(mean: Vec3, std: f64, log_weight: f64) -> Self {
        Self::new(mean, Mat3::identity() / std, log_weight, Vec3::zeros())
    }

    /// Component from a covariance matrix, using the symmetric inverse root.
    pub fn from_covariance(mean: Vec3, covariance: &Mat3, log_weight: f64) -> Option<Self> {
        let eig = covariance.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return None;
        }
        let inv_sqrt = Mat3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        let root = eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
        Some(Self::new(mean, root, log_weight, Vec3::zeros()))
    }

    pub fn precision(&self) -> Mat3 {
        self.root_precision.transpose() * self.root_precision
    }

    /// `Σ`; `None` when the root precision is singular.
    pub fn covariance(&self) -> Option<Mat3> {
        self.precision().try_inverse()
    }

    pub fn color(&self) -> Vec3 {
        self.color_raw.map(sigmoid)
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|x| x.is_finite())
            && self.root_precision.iter().all(|x| x.is_finite())
            && self.log_weight.is_finite()
            && self.color_raw.iter().all(|x| x.is_finite())
    }

    /// True when `|det U|` falls below `1e-12 · scene_scale⁻³`.
    pub fn is_degenerate(&self, scene_scale: f64) -> bool {
        !self.is_finite() || self.root_precision.determinant().abs() < 1e-12 / scene_scale.powi(3)
    }

    pub fn write_params(&self, out: &mut [f64]) {
        out[0..3].copy_from_slice(self.mean.as_slice());
        for r in 0..3 {
            for c in 0..3 {
                out[3 + 3 * r + c] = self.root_precision[(r, c)];
            }
        }
        out[12] = self.log_weight;
        out[13..16].copy_from_slice(self.color_raw.as_slice());
    }

    pub fn from_params(p: &[f64]) -> Self {
        Self {
            mean: Vec3::new(p[0], p[1], p[2]),
            root_precision: Mat3::new(p[3], p[4], p[5], p[6], p[7], p[8], p[9], p[10], p[11]),
            log_weight: p[12],
            color_raw: Vec3::new(p[13], p[14], p[15]),
        }
    }
}

/// An ordered set of components with a scene scale `η`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub components: Vec<Gaussian3D>,
    pub scene_scale: f64,
}

impl Mixture {
    pub fn new(components: Vec<Gaussian3D>, scene_scale: f64) -> Result<Self> {
        if !(scene_scale > 0.0) || !scene_scale.is_finite() {
            return Err(Error::Invalid(format!(
                "scene scale must be positive, got {scene_scale}"
            )));
        }
        Ok(Self {
            components,
            scene_scale,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn to_params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * PARAMS_PER_COMPONENT];
        for (g, chunk) in self.components.iter().zip(out.chunks_exact_mut(PARAMS_PER_COMPONENT)) {
            g.write_params(chunk);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.len() * PARAMS_PER_COMPONENT);
        for (g, chunk) in self
            .components
            .iter_mut()
            .zip(params.chunks_exact(PARAMS_PER_COMPONENT))
        {
            *g = Gaussian3D::from_params(chunk);
        }
    }

    pub fn from_params(params: &[f64], scene_scale: f64) -> Self {
        Self {
            components: params
                .chunks_exact(PARAMS_PER_COMPONENT)
                .map(Gaussian3D::from_params)
                .collect(),
            scene_scale,
        }
    }

    /// Indices of components whose root precision is numerically singular.
    pub fn degenerate_components(&self) -> Vec<usize> {
        self.components
            .iter()
            .enumerate()
            .filter(|(_, g)| g.is_degenerate(self.scene_scale))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self { origin, direction }
    }

    /// Builds a ray, normalizing the direction.
    pub fn towards(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Depth of maximum density of `g` along `ray`: `t = (μ−o)ᵀΣ⁻¹v / vᵀΣ⁻¹v`.
pub fn ray_intersection_t(ray: &Ray, g: &Gaussian3D) -> f64 {
    let a = g.root_precision * ray.direction;
    let b = g.root_precision * (g.mean - ray.origin);
    a.dot(&b) / a.dot(&a)
}

/// `d = −½ (vt+o−μ)ᵀ Σ⁻¹ (vt+o−μ) + log λ`, without the determinant factor.
pub fn log_density_along_ray(ray: &Ray, g: &Gaussian3D, t: f64) -> f64 {
    let e = g.root_precision * (ray.at(t) - g.mean);
    -0.5 * e.norm_squared() + g.log_weight
}

#[inline]
pub fn delta(d: f64) -> f64 {
    d.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn z_ray(oz: f64) -> Ray {
        Ray::new(Vec3::new(0.0, 0.0, oz), Vec3::z())
    }

    fn cov_gaussian(mean: Vec3, cov: Mat3) -> Gaussian3D {
        Gaussian3D::from_covariance(mean, &cov, 0.0).unwrap()
    }

    #[test]
    fn intersection_through_mean() {
        let g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 5.0), 1.0, 0.0);
        assert_abs_diff_eq!(ray_intersection_t(&z_ray(0.0), &g), 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ray_intersection_t(&z_ray(-2.0), &g), 7.0, epsilon = 1e-15);
    }

    /// Brute-force maximization of the full Gaussian density (including the
    /// determinant factor, which is constant in t) on a grid, refined by
    /// golden-section search.
    fn brute_force_argmax(ray: &Ray, mean: Vec3, cov: Mat3) -> f64 {
        let prec = cov.try_inverse().unwrap();
        let density = |t: f64| {
            let r = ray.at(t) - mean;
            cov.determinant().powf(-0.5) * (-0.5 * (r.transpose() * prec * r)[(0, 0)]).exp()
        };
        let (mut best, mut best_val) = (0.0, f64::MIN);
        for i in 0..=20_000 {
            let t = -10.0 + 20.0 * i as f64 / 20_000.0;
            let v = density(t);
            if v > best_val {
                best_val = v;
                best = t;
            }
        }
        let (mut lo, mut hi) = (best - 2e-3, best + 2e-3);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if density(m1) > density(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn intersection_offset_anisotropic_matches_brute_force() {
        let cov = Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0));
        let mean = Vec3::new(1.0, 0.0, 5.0);
        let g = cov_gaussian(mean, cov);
        let ray = z_ray(0.0);
        let oracle = brute_force_argmax(&ray, mean, cov);
        assert_abs_diff_eq!(ray_intersection_t(&ray, &g), oracle, epsilon = 1e-8);
        assert_abs_diff_eq!(oracle, 5.0, epsilon = 1e-8);
    }

    #[test]
    fn intersection_rotated_matches_brute_force() {
        let rot = Rotation3::from_euler_angles(0.3, -0.4, 0.9);
        let cov = rot.matrix() * Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 0.25)) * rot.matrix().transpose();
        let mean = Vec3::new(1.0, -0.5, 5.0);
        let g = cov_gaussian(mean, cov);
        let ray = Ray::towards(Vec3::new(0.2, 0.1, -1.0), Vec3::new(0.1, 0.05, 1.0));
        let oracle = brute_force_argmax(&ray, mean, cov);
        assert_abs_diff_eq!(ray_intersection_t(&ray, &g), oracle, epsilon = 1e-8);
    }

    #[test]
    fn log_density_examples() {
        let ray = z_ray(0.0);
        let mut g = Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 5.0), 1.0, 0.0);
        let t = ray_intersection_t(&ray, &g);
        assert_eq!(log_density_along_ray(&ray, &g, t), 0.0);
        g.log_weight = 0.5f64.ln();
        assert_abs_diff_eq!(log_density_along_ray(&ray, &g, t), 0.5f64.ln(), epsilon = 1e-15);

        // dense-matrix oracle for the offset case
        let cov = Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0));
        let mean = Vec3::new(1.0, 0.0, 5.0);
        let g = cov_gaussian(mean, cov);
        let t = ray_intersection_t(&ray, &g);
        let r = ray.at(t) - mean;
        let prec = cov.try_inverse().unwrap();
        let oracle = -0.5 * (r.transpose() * prec * r)[(0, 0)];
        assert_abs_diff_eq!(log_density_along_ray(&ray, &g, t), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle, -0.125, epsilon = 1e-12);
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(0.0), 1.0);
        assert_abs_diff_eq!(delta(0.5f64.ln()), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(delta(-20.0), 2.061_153_622_438_558e-9, epsilon = 1e-20);
    }

    #[test]
    fn params_roundtrip() {
        let g = Gaussian3D::new(
            Vec3::new(1.0, 2.0, 3.0),
            Mat3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0),
            -0.5,
            Vec3::new(0.1, 0.2, 0.3),
        );
        let mut p = [0.0; PARAMS_PER_COMPONENT];
        g.write_params(&mut p);
        assert_eq!(Gaussian3D::from_params(&p), g);
    }

    #[test]
    fn degenerate_detection() {
        let mut g = Gaussian3D::isotropic(Vec3::zeros(), 1.0, 0.0);
        assert!(!g.is_degenerate(1.0));
        g.root_precision[(2, 0)] = 0.0;
        g.root_precision[(2, 2)] = 0.0;
        assert!(g.is_degenerate(1.0));
    }

    fn arb_vec(range: f64) -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-range..range).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
    }

    fn arb_gaussian() -> impl Strategy<Value = Gaussian3D> {
        (arb_vec(3.0), prop::array::uniform9(-1.0f64..1.0), -2.0f64..2.0).prop_map(|(mean, u, lw)| {
            let mut root = Mat3::from_row_slice(&u);
            root += Mat3::identity() * 2.0;
            Gaussian3D::new(mean, root, lw, Vec3::zeros())
        })
    }

    fn arb_ray() -> impl Strategy<Value = Ray> {
        (arb_vec(3.0), arb_vec(1.0))
            .prop_filter("nonzero direction", |(_, d)| d.norm() > 0.1)
            .prop_map(|(o, d)| Ray::towards(o, d))
    }

    proptest! {
        #[test]
        fn intersection_is_stationary(ray in arb_ray(), g in arb_gaussian()) {
            let t = ray_intersection_t(&ray, &g);
            let h = 1e-5;
            let d_plus = log_density_along_ray(&ray, &g, t + h);
            let d_minus = log_density_along_ray(&ray, &g, t - h);
            let deriv = (d_plus - d_minus) / (2.0 * h);
            let curvature = (g.root_precision * ray.direction).norm_squared();
            prop_assert!(deriv.abs() < 1e-6 * curvature.max(1.0) * (1.0 + t.abs()));
        }

        #[test]
        fn translation_equivariance(ray in arb_ray(), g in arb_gaussian(), shift in arb_vec(5.0)) {
            let t = ray_intersection_t(&ray, &g);
            let d = log_density_along_ray(&ray, &g, t);
            let ray2 = Ray::new(ray.origin + shift, ray.direction);
            let mut g2 = g.clone();
            g2.mean += shift;
            let t2 = ray_intersection_t(&ray2, &g2);
            let d2 = log_density_along_ray(&ray2, &g2, t2);
            prop_assert!((t - t2).abs() < 1e-12 * (1.0 + t.abs()) * 10.0);
            prop_assert!((d - d2).abs() < 1e-12 * (1.0 + d.abs()) * 10.0);
            prop_assert!((delta(d) - delta(d2)).abs() < 1e-12 * 10.0);
        }

        #[test]
        fn rotation_equivariance(ray in arb_ray(), g in arb_gaussian(), angles in prop::array::uniform3(-3.0f64..3.0)) {
            let rot = Rotation3::from_euler_angles(angles[0], angles[1], angles[2]);
            let r = rot.matrix();
            let t = ray_intersection_t(&ray, &g);
            let d = log_density_along_ray(&ray, &g, t);
            let ray2 = Ray::new(r * ray.origin, r * ray.direction);
            let mut g2 = g.clone();
            g2.mean = r * g.mean;
            g2.root_precision = r * g.root_precision * r.transpose();
            let t2 = ray_intersection_t(&ray2, &g2);
            let d2 = log_density_along_ray(&ray2, &g2, t2);
            prop_assert!((d - d2).abs() < 1e-9 * (1.0 + d.abs()));
        }
    }
}
