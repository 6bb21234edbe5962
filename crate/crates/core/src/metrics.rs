//! Depth error against held-out ground truth.

use crate::dataset::Dataset;
use crate::gmm::Mixture;
use crate::render::{render_maps, RenderConfig};
use crate::{Error, Result};

/// Mean absolute difference over mask pixels where both depths are finite.
pub fn depth_error(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    if pred.len() != gt.len() || gt.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "depth buffers differ in size: {}, {}, {}",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let (sum, count) = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|((p, g), m)| **m && p.is_finite() && g.is_finite())
        .fold((0.0, 0usize), |(s, n), ((p, g), _)| (s + (p - g).abs(), n + 1));
    if count == 0 {
        return Err(Error::Invalid("depth error over an empty mask".into()));
    }
    Ok(sum / count as f64)
}

/// Depth error of `mix` rendered from every training view, pooled over all
/// masked pixels. Background predictions on masked pixels are excluded.
pub fn mixture_depth_error(mix: &Mixture, cfg: &RenderConfig, dataset: &Dataset, gt: &[Vec<f64>]) -> Result<f64> {
    if gt.len() != dataset.frames.len() {
        return Err(Error::Dimension(format!(
            "{} ground-truth depth maps for {} frames",
            gt.len(),
            dataset.frames.len()
        )));
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut mask = Vec::new();
    for ((cam, frame), g) in dataset.cameras.iter().zip(&dataset.frames).zip(gt) {
        let maps = render_maps(cam, mix, cfg);
        pred.extend(maps.depth);
        truth.extend_from_slice(g);
        mask.extend(frame.mask.iter().map(|m| *m >= 0.5));
    }
    depth_error(&pred, &truth, &mask)
}
