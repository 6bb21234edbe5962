//! Random-sphere initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::camera::Camera;
use crate::gmm::{Gaussian3D, Mat3, Mixture, Vec3};

pub const INIT_RADIUS: f64 = 0.3;
pub const INIT_JITTER: f64 = 0.1;
pub const INIT_STD: f64 = 0.1;

/// Point closest (in least squares) to every optical axis; falls back to
/// the centroid of camera centers when the axes are near parallel.
pub fn look_at_centroid(cameras: &[Camera]) -> Vec3 {
    if cameras.is_empty() {
        return Vec3::zeros();
    }
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for c in cameras {
        let d = c.pose.rotation.column(2).into_owned().normalize();
        let p = Mat3::identity() - d * d.transpose();
        a += p;
        b += p * c.center();
    }
    let eig = a.symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if lo > 1e-6 * hi {
        if let Some(inv) = a.try_inverse() {
            return inv * b;
        }
    }
    cameras.iter().map(Camera::center).sum::<Vec3>() / cameras.len() as f64
}

/// `n` isotropic components on a jittered sphere of radius 0.3 around
/// `center`; fully determined by `seed`.
pub fn init_mixture(n: usize, seed: u64, center: Vec3) -> Mixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_w = (1.0 / n.max(1) as f64).ln();
    let comps = (0..n)
        .map(|_| {
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let r = INIT_RADIUS * rng.random_range(1.0 - INIT_JITTER..=1.0 + INIT_JITTER);
            Gaussian3D::isotropic(center + Vec3::from(dir) * r, INIT_STD, log_w)
        })
        .collect();
    Mixture::new(comps, 1.0).expect("unit scene scale")
}
