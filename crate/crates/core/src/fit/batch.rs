use rand::Rng;

use crate::camera::Camera;
use crate::dataset::Dataset;
use crate::gmm::{Ray, Vec3};
use crate::{Error, Result};

/// One supervised ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayRecord {
    pub frame: usize,
    /// Pixel coordinates the ray passes through.
    pub pixel: [f64; 2],
    pub ray: Ray,
    /// Mask value in {0, 1} (fractional values are accepted).
    pub target_alpha: f64,
    /// Linear-intensity RGB.
    pub target_color: Vec3,
    /// Flow towards frame `frame + 1`, in units of half the shorter image side.
    pub flow_fwd: Option<[f64; 2]>,
    /// Flow towards frame `frame − 1`, same units.
    pub flow_bwd: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub records: Vec<RayRecord>,
    /// Cameras indexed by frame; flow terms use the neighbors of each frame.
    pub cameras: Vec<Camera>,
}

impl RayBatch {
    pub fn new(records: Vec<RayRecord>, cameras: Vec<Camera>) -> Self {
        Self { records, cameras }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Recomputes every ray from its camera and pixel.
    pub fn regenerate_rays(&mut self) {
        for r in &mut self.records {
            r.ray = self.cameras[r.frame].generate_ray(r.pixel[0], r.pixel[1]);
        }
    }

    /// Copy of the batch with every camera's inverse focal length replaced.
    pub fn with_inv_focal(&self, inv_focal: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.cameras {
            c.inv_focal = inv_focal;
        }
        out.regenerate_rays();
        out
    }
}

/// Record for pixel `(col, row)` of `frame`.
pub fn make_record(dataset: &Dataset, frame: usize, col: usize, row: usize) -> RayRecord {
    let cam = &dataset.cameras[frame];
    let f = &dataset.frames[frame];
    let idx = row * cam.width + col;
    let scale = cam.flow_scale();
    let norm_flow = |field: &Option<crate::render::FlowField>| {
        field.as_ref().and_then(|fl| {
            let v = fl.data[idx];
            crate::render::FlowField::is_valid(v).then(|| [v[0] as f64 / scale, v[1] as f64 / scale])
        })
    };
    let (u, v) = (col as f64 + 0.5, row as f64 + 0.5);
    RayRecord {
        frame,
        pixel: [u, v],
        ray: cam.generate_ray(u, v),
        target_alpha: f.mask[idx],
        target_color: f.color[idx],
        flow_fwd: if frame + 1 < dataset.frames.len() {
            norm_flow(&f.flow_fwd)
        } else {
            None
        },
        flow_bwd: if frame > 0 { norm_flow(&f.flow_bwd) } else { None },
    }
}

/// Every ray of the dataset in frame-major, row-major order.
pub fn full_batch(dataset: &Dataset) -> RayBatch {
    let mut records = Vec::with_capacity(dataset.ray_count());
    for (fi, cam) in dataset.cameras.iter().enumerate() {
        for row in 0..cam.height {
            for col in 0..cam.width {
                records.push(make_record(dataset, fi, col, row));
            }
        }
    }
    RayBatch::new(records, dataset.cameras.clone())
}

/// Uniform sample of `size` distinct (frame, pixel) pairs across all frames.
pub fn sample_batch<R: Rng + ?Sized>(dataset: &Dataset, size: usize, rng: &mut R) -> Result<RayBatch> {
    let total = dataset.ray_count();
    if total == 0 {
        return Err(Error::Invalid("dataset has no rays".into()));
    }
    if size > total {
        return Err(Error::Invalid(format!(
            "batch of {size} rays requested from a dataset with {total}"
        )));
    }
    let mut picks = rand::seq::index::sample(rng, total, size).into_vec();
    // memory-friendly order; the set itself is what was sampled
    picks.sort_unstable();
    let mut offsets = Vec::with_capacity(dataset.frames.len());
    let mut acc = 0;
    for cam in &dataset.cameras {
        offsets.push(acc);
        acc += cam.pixel_count();
    }
    let records = picks
        .into_iter()
        .map(|flat| {
            let frame = offsets.partition_point(|&o| o <= flat) - 1;
            let local = flat - offsets[frame];
            let w = dataset.cameras[frame].width;
            make_record(dataset, frame, local % w, local / w)
        })
        .collect();
    Ok(RayBatch::new(records, dataset.cameras.clone()))
}
