//! Per-ray timing of a full loss-and-gradient pass.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fit::{loss_and_gradient, LossWeights, RayBatch, RayRecord};
use crate::gmm::{Mixture, Vec3};
use crate::render::{BlendMode, RenderConfig};
use crate::synth::{ground_truth_mixture, orbit_cameras, SceneKind, SynthSpec};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchSpec {
    pub components: usize,
    /// Total rays timed per mode.
    pub rays: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            components: 40,
            rays: 1_000_000,
            batch_size: 50_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchReport {
    pub components: usize,
    pub rays: usize,
    pub weighted_ns: f64,
    pub composited_ns: f64,
}

impl BenchReport {
    /// Composited time over weighted time.
    pub fn ratio(&self) -> f64 {
        self.composited_ns / self.weighted_ns
    }
}

fn bench_batch(spec: &BenchSpec) -> Result<(Mixture, RayBatch)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mix = if spec.components == 0 {
        Mixture::new(Vec::new(), 1.0)?
    } else {
        ground_truth_mixture(SceneKind::Blobs, spec.components, &mut rng)?
    };
    let synth = SynthSpec {
        views: 8,
        ..Default::default()
    };
    let cameras = orbit_cameras(&synth)?;
    let records = (0..spec.batch_size)
        .map(|_| {
            let frame = rng.random_range(0..cameras.len());
            let cam = &cameras[frame];
            let pixel = [
                rng.random_range(0.0..cam.width as f64),
                rng.random_range(0.0..cam.height as f64),
            ];
            let flow = Some([rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]);
            RayRecord {
                frame,
                pixel,
                ray: cam.generate_ray(pixel[0], pixel[1]),
                target_alpha: if rng.random_bool(0.5) { 1.0 } else { 0.0 },
                target_color: Vec3::new(rng.random(), rng.random(), rng.random()),
                flow_fwd: (frame + 1 < cameras.len()).then_some(flow).flatten(),
                flow_bwd: (frame > 0).then_some(flow).flatten(),
            }
        })
        .collect();
    Ok((mix, RayBatch::new(records, cameras)))
}

fn time_mode(mix: &Mixture, batch: &RayBatch, mode: BlendMode, rays: usize) -> Result<f64> {
    let cfg = RenderConfig::with_mode(mode).for_mixture(mix);
    let weights = LossWeights::default();
    let reps = rays.div_ceil(batch.len()).max(1);
    // one untimed pass to warm caches and the thread pool
    loss_and_gradient(mix, batch, &cfg, &weights)?;
    let start = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(loss_and_gradient(mix, batch, &cfg, &weights)?);
    }
    Ok(start.elapsed().as_nanos() as f64 / (reps * batch.len()) as f64)
}

/// Times forward and backward passes in both modes over the same rays.
pub fn bench(spec: &BenchSpec) -> Result<BenchReport> {
    let (mix, batch) = bench_batch(spec)?;
    let weighted_ns = time_mode(&mix, &batch, BlendMode::Weighted2, spec.rays)?;
    let composited_ns = time_mode(&mix, &batch, BlendMode::AlphaComposited, spec.rays)?;
    let rays = spec.rays.div_ceil(batch.len()).max(1) * batch.len();
    Ok(BenchReport {
        components: mix.len(),
        rays,
        weighted_ns,
        composited_ns,
    })
}
