//! Pinhole camera with a single inverse focal length.
//!
//! Camera frame: x right, y down, z forward. The principal point sits at the
//! image center and pixels are square. Pixel `(u, v)` measures from the
//! top-left image corner, so the center of pixel `(i, j)` is `(i + ½, j + ½)`.

use nalgebra::{Rotation3, UnitQuaternion};

use crate::gmm::{Mat3, Ray, Vec3};
use crate::{Error, Result};

/// World-from-camera rigid transform. `translation` is the camera center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_quaternion(wxyz: [f64; 4], translation: Vec3) -> Result<Self> {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Invalid(format!("bad quaternion {wxyz:?}")));
        }
        let rot = UnitQuaternion::from_quaternion(q);
        Ok(Self {
            rotation: *rot.to_rotation_matrix().matrix(),
            translation,
        })
    }

    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        [q.w, q.i, q.j, q.k]
    }

    /// Camera looking from `eye` towards `target`; `up` is the approximate
    /// world direction of image-up (camera −y).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        Self {
            rotation: Mat3::from_columns(&[x, y, z]),
            translation: eye,
        }
    }

    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation.transpose() * (world - self.translation)
    }

    pub fn to_world(&self, cam: &Vec3) -> Vec3 {
        self.rotation * cam + self.translation
    }

    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Mat3::identity()).abs().max() < tol && (r.determinant() - 1.0).abs() < tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub pose: Pose,
    pub inv_focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(pose: Pose, inv_focal: f64, width: usize, height: usize) -> Result<Self> {
        if !(inv_focal > 0.0) || !inv_focal.is_finite() {
            return Err(Error::Invalid(format!(
                "inverse focal must be positive, got {inv_focal}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Invalid("image dimensions must be positive".into()));
        }
        if !pose.is_rigid(1e-9) {
            return Err(Error::Invalid("pose rotation is not orthonormal".into()));
        }
        Ok(Self {
            pose,
            inv_focal,
            width,
            height,
        })
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unnormalized camera-frame direction through pixel coordinates `(u, v)`.
    pub fn camera_direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new(
            (u - self.width as f64 / 2.0) * self.inv_focal,
            (v - self.height as f64 / 2.0) * self.inv_focal,
            1.0,
        )
    }

    pub fn generate_ray(&self, u: f64, v: f64) -> Ray {
        let dir = self.pose.rotation * self.camera_direction(u, v).normalize();
        Ray::new(self.pose.translation, dir)
    }

    /// Ray through the center of pixel `(col, row)`.
    pub fn pixel_ray(&self, col: usize, row: usize) -> Ray {
        self.generate_ray(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Projects a world point; `None` when it lies on or behind the image plane.
    pub fn project(&self, world: &Vec3) -> Option<[f64; 2]> {
        let c = self.pose.to_camera(world);
        if !(c.z > 0.0) {
            return None;
        }
        Some([
            c.x / (c.z * self.inv_focal) + self.width as f64 / 2.0,
            c.y / (c.z * self.inv_focal) + self.height as f64 / 2.0,
        ])
    }

    /// Half of the shorter image side, the unit for normalized flow.
    pub fn flow_scale(&self) -> f64 {
        self.width.min(self.height) as f64 / 2.0
    }
}
