//! Posed image sequences: loading, writing and canonical rescaling.
//!
//! Directory layout:
//!
//! ```text
//! poses.txt          name qw qx qy qz tx ty tz inv_focal   (one frame per line)
//! images/<name>.png  8-bit RGB, gamma encoded
//! masks/<name>.png   8-bit gray, values ≥ 128 are foreground
//! flow_fwd/<name>.flo, flow_bwd/<name>.flo   optional, in pixels
//! ```
//!
//! Poses are world-from-camera; the translation is the camera center.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::camera::{Camera, Pose};
use crate::formats::{flo, png};
use crate::gmm::Vec3;
use crate::render::FlowField;
use crate::{Error, Result};

/// Exponent of the pure power-law transfer curve used for stored colors.
pub const GAMMA: f64 = 2.2;

pub fn srgb8_to_linear(v: u8) -> f64 {
    (v as f64 / 255.0).powf(GAMMA)
}

pub fn linear_to_srgb8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0).powf(1.0 / GAMMA) * 255.0).round() as u8
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub name: String,
    /// Linear-intensity RGB, row-major.
    pub color: Vec<Vec3>,
    /// Foreground mask in {0, 1}, row-major.
    pub mask: Vec<f64>,
    /// Flow towards the next frame, in pixels.
    pub flow_fwd: Option<FlowField>,
    /// Flow towards the previous frame, in pixels.
    pub flow_bwd: Option<FlowField>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub cameras: Vec<Camera>,
    /// Factor that maps the original scene units to the current ones.
    pub canonical_scale: f64,
}

impl Dataset {
    pub fn new(frames: Vec<Frame>, cameras: Vec<Camera>) -> Result<Self> {
        let ds = Self {
            frames,
            cameras,
            canonical_scale: 1.0,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.cameras.len() {
            return Err(Error::Dimension(format!(
                "{} frames but {} cameras",
                self.frames.len(),
                self.cameras.len()
            )));
        }
        let Some(first) = self.cameras.first() else {
            return Ok(());
        };
        let (w, h) = (first.width, first.height);
        for (f, c) in self.frames.iter().zip(&self.cameras) {
            if (c.width, c.height) != (w, h) {
                return Err(Error::Dimension(format!(
                    "frame {} is {}x{}, expected {w}x{h}",
                    f.name, c.width, c.height
                )));
            }
            if f.color.len() != w * h || f.mask.len() != w * h {
                return Err(Error::Dimension(format!(
                    "frame {} buffers do not match {w}x{h}",
                    f.name
                )));
            }
            for fl in [&f.flow_fwd, &f.flow_bwd].into_iter().flatten() {
                if (fl.width, fl.height) != (w, h) {
                    return Err(Error::Dimension(format!(
                        "flow of frame {} is {}x{}, expected {w}x{h}",
                        f.name, fl.width, fl.height
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn ray_count(&self) -> usize {
        self.cameras.iter().map(Camera::pixel_count).sum()
    }

    /// True when any frame carries a flow target.
    pub fn has_flow(&self) -> bool {
        self.frames.iter().any(|f| f.flow_fwd.is_some() || f.flow_bwd.is_some())
    }

    pub fn drop_flow(&mut self) {
        for f in &mut self.frames {
            f.flow_fwd = None;
            f.flow_bwd = None;
        }
    }
}

/// Scales camera centers so their mean distance from the centroid is 1.
///
/// Returns the rescaled dataset and the applied factor `s`.
pub fn canonical_rescale(dataset: &Dataset) -> Result<(Dataset, f64)> {
    if dataset.cameras.len() < 2 {
        return Err(Error::Degenerate(
            "canonical rescaling needs at least two cameras".into(),
        ));
    }
    let centers: Vec<Vec3> = dataset.cameras.iter().map(Camera::center).collect();
    let centroid = centers.iter().sum::<Vec3>() / centers.len() as f64;
    let mean_dist = centers.iter().map(|c| (c - centroid).norm()).sum::<f64>() / centers.len() as f64;
    if !(mean_dist > 1e-12) {
        return Err(Error::Degenerate("all camera centers coincide".into()));
    }
    let s = 1.0 / mean_dist;
    let mut out = dataset.clone();
    for c in &mut out.cameras {
        c.pose.translation *= s;
    }
    out.canonical_scale *= s;
    Ok((out, s))
}

fn parse_pose_line(line: &str, path: &Path, lineno: usize) -> Result<(String, Pose, f64)> {
    let err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        reason,
    };
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 9 {
        return Err(err(format!("expected 9 fields, found {}", parts.len())));
    }
    let mut nums = [0.0f64; 8];
    for (n, p) in nums.iter_mut().zip(&parts[1..]) {
        *n = p.parse().map_err(|_| err(format!("`{p}` is not a number")))?;
        if !n.is_finite() {
            return Err(err(format!("`{p}` is not finite")));
        }
    }
    let pose = Pose::from_quaternion(
        [nums[0], nums[1], nums[2], nums[3]],
        Vec3::new(nums[4], nums[5], nums[6]),
    )
    .map_err(|e| err(e.to_string()))?;
    Ok((parts[0].to_string(), pose, nums[7]))
}

pub fn read_poses(path: &Path) -> Result<Vec<(String, Pose, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_pose_line(line, path, i + 1)?);
    }
    Ok(out)
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Missing(path))
    }
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let poses = read_poses(&existing(root.join("poses.txt"))?)?;
    if poses.is_empty() {
        return Err(Error::Invalid(format!(
            "{} lists no frames",
            root.join("poses.txt").display()
        )));
    }
    let fwd_dir = root.join("flow_fwd");
    let bwd_dir = root.join("flow_bwd");
    if !fwd_dir.is_dir() && !bwd_dir.is_dir() {
        log::warn!("{}: no flow directories, flow loss disabled", root.display());
    }
    let n = poses.len();
    let mut frames = Vec::with_capacity(n);
    let mut cameras = Vec::with_capacity(n);
    for (i, (name, pose, inv_focal)) in poses.into_iter().enumerate() {
        let (w, h, rgb) = png::read_rgb8(existing(root.join("images").join(format!("{name}.png")))?)?;
        let mask_path = root.join("masks").join(format!("{name}.png"));
        let (mw, mh, mask) = png::read_gray8(existing(mask_path.clone())?)?;
        if (mw, mh) != (w, h) {
            return Err(Error::Dimension(format!(
                "{} is {mw}x{mh}, image is {w}x{h}",
                mask_path.display()
            )));
        }
        let load_flow = |dir: &Path, wanted: bool| -> Result<Option<FlowField>> {
            let p = dir.join(format!("{name}.flo"));
            if !wanted || !p.is_file() {
                return Ok(None);
            }
            flo::read_flo(&p).map(Some)
        };
        let flow_fwd = load_flow(&fwd_dir, i + 1 < n)?;
        let flow_bwd = load_flow(&bwd_dir, i > 0)?;
        let camera = Camera::new(pose, inv_focal, w, h)?;
        frames.push(Frame {
            name,
            color: rgb
                .iter()
                .map(|p| Vec3::new(srgb8_to_linear(p[0]), srgb8_to_linear(p[1]), srgb8_to_linear(p[2])))
                .collect(),
            mask: mask.iter().map(|&m| if m >= 128 { 1.0 } else { 0.0 }).collect(),
            flow_fwd,
            flow_bwd,
        });
        cameras.push(camera);
    }
    Dataset::new(frames, cameras)
}

/// Writes `dataset` in the layout read by [`load_dataset`].
pub fn write_dataset(dataset: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    dataset.validate()?;
    for sub in ["images", "masks"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let any_fwd = dataset.frames.iter().any(|f| f.flow_fwd.is_some());
    let any_bwd = dataset.frames.iter().any(|f| f.flow_bwd.is_some());
    for (flag, sub) in [(any_fwd, "flow_fwd"), (any_bwd, "flow_bwd")] {
        if flag {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    let mut poses = String::from("# name qw qx qy qz tx ty tz inv_focal\n");
    for (f, c) in dataset.frames.iter().zip(&dataset.cameras) {
        let q = c.pose.quaternion_wxyz();
        let t = c.pose.translation;
        writeln!(
            poses,
            "{} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e}",
            f.name, q[0], q[1], q[2], q[3], t.x, t.y, t.z, c.inv_focal
        )
        .unwrap();
        let rgb: Vec<[u8; 3]> = f
            .color
            .iter()
            .map(|c| [linear_to_srgb8(c.x), linear_to_srgb8(c.y), linear_to_srgb8(c.z)])
            .collect();
        png::write_rgb8(
            root.join("images").join(format!("{}.png", f.name)),
            c.width,
            c.height,
            &rgb,
        )?;
        let mask: Vec<u8> = f.mask.iter().map(|&m| if m >= 0.5 { 255 } else { 0 }).collect();
        png::write_gray8(
            root.join("masks").join(format!("{}.png", f.name)),
            c.width,
            c.height,
            &mask,
        )?;
        if let Some(fl) = &f.flow_fwd {
            flo::write_flo(root.join("flow_fwd").join(format!("{}.flo", f.name)), fl)?;
        }
        if let Some(fl) = &f.flow_bwd {
            flo::write_flo(root.join("flow_bwd").join(format!("{}.flo", f.name)), fl)?;
        }
    }
    let p = root.join("poses.txt");
    fs::write(&p, poses).map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(radius: f64, n: usize) -> Dataset {
        let mut frames = Vec::new();
        let mut cameras = Vec::new();
        for i in 0..n {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let eye = Vec3::new(radius * a.cos(), 0.0, radius * a.sin());
            let pose = Pose::look_at(eye, Vec3::zeros(), Vec3::new(0.0, -1.0, 0.0));
            cameras.push(Camera::new(pose, 0.01, 4, 3).unwrap());
            frames.push(Frame {
                name: format!("{i:04}"),
                color: vec![Vec3::zeros(); 12],
                mask: vec![0.0; 12],
                flow_fwd: None,
                flow_bwd: None,
            });
        }
        Dataset::new(frames, cameras).unwrap()
    }

    #[test]
    fn gamma_round_trip() {
        for v in 0..=255u8 {
            assert_eq!(linear_to_srgb8(srgb8_to_linear(v)), v);
        }
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let back = x.powf(1.0 / GAMMA).powf(GAMMA);
            assert!((back - x).abs() < 1e-6);
        }
    }

    #[test]
    fn rescale_circle() {
        let (ds, s) = canonical_rescale(&ring(4.0, 8)).unwrap();
        assert!((s - 0.25).abs() < 1e-12);
        let (_, s2) = canonical_rescale(&ds).unwrap();
        assert!((s2 - 1.0).abs() < 1e-12);
        assert!((ds.canonical_scale - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rescale_rejects_coincident() {
        let mut ds = ring(1.0, 3);
        for c in &mut ds.cameras {
            c.pose.translation = Vec3::new(1.0, 2.0, 3.0);
        }
        assert!(matches!(canonical_rescale(&ds), Err(Error::Degenerate(_))));
    }

    #[test]
    fn bad_pose_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        fs::write(&p, "# header\na 1 0 0 0 0 0 0 0.01\nb 1 0 0 zero 0 0 0 0.01\n").unwrap();
        match read_poses(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_mask_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ring(1.0, 2);
        write_dataset(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join("masks/0001.png")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Missing(p)) => assert!(p.ends_with("masks/0001.png")),
            other => panic!("{other:?}"),
        }
    }
}
