//! Pinhole camera model.
//!
//! Conventions used across the crate:
//! - pixels are addressed `(row, col)`, row-major, and pixel `(r, c)` covers
//!   the continuous square `[r, r+1) × [c, c+1)`, so its center is at
//!   `(r + 0.5, c + 0.5)`;
//! - the camera frame is x right, y down, z forward; `CameraPose::rotation`
//!   maps camera coordinates to world coordinates;
//! - depth is camera-frame `z` divided by `Intrinsics::far_plane`, so valid
//!   depths live in `(0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Depth normalization constant; points beyond it are outside the frustum.
    pub far_plane: f64,
}

impl Intrinsics {
    /// Square pixels with the principal point at the image center.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64, far_plane: f64) -> Result<Self> {
        if !(fov_x_deg > 0.0 && fov_x_deg < 180.0) {
            return Err(Error::Config(format!("field of view {fov_x_deg} out of (0, 180)")));
        }
        let fx = width as f64 / (2.0 * (fov_x_deg.to_radians() * 0.5).tan());
        let intr = Self {
            width,
            height,
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            far_plane,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("empty image".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::Config("principal point outside the image".into()));
        }
        if !(self.far_plane > 0.0) {
            return Err(Error::Config("far plane must be positive".into()));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    /// Camera-to-world rotation with columns (right, down, forward).
    pub rotation: Mat3,
    pub look_target: Vec3,
}

impl CameraPose {
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.position)
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.position
    }

    /// World-space direction of the ray through a continuous pixel coordinate.
    pub fn ray_dir(&self, row: f64, col: f64, intr: &Intrinsics) -> Vec3 {
        let d = Vec3::new((col - intr.cx) / intr.fx, (row - intr.cy) / intr.fy, 1.0);
        (self.rotation * d).normalize()
    }
}

/// Look-at pose whose principal axis passes through `target`.
pub fn make_lookat(position: Vec3, target: Vec3, up_hint: Vec3) -> Result<CameraPose> {
    let fwd = target - position;
    let dist = fwd.norm();
    if !(dist > 1e-12) {
        return Err(Error::Frame("camera position coincides with target".into()));
    }
    let fwd = fwd / dist;
    let right = fwd.cross(&up_hint);
    let rn = right.norm();
    if !(rn > 1e-9 * up_hint.norm()) {
        return Err(Error::Frame("up hint parallel to the viewing direction".into()));
    }
    let right = right / rn;
    let down = fwd.cross(&right);
    Ok(CameraPose {
        position,
        rotation: Mat3::from_columns(&[right, down, fwd]),
        look_target: target,
    })
}

/// Continuous image coordinates of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub row: f64,
    pub col: f64,
    /// Normalized depth.
    pub depth: f64,
}

impl Projection {
    pub fn pixel(&self) -> (usize, usize) {
        (self.row.floor() as usize, self.col.floor() as usize)
    }
}

/// `None` means out of frustum: behind the camera, past the far plane, or
/// outside the image.
pub fn project(point: &Vec3, pose: &CameraPose, intr: &Intrinsics) -> Option<Projection> {
    let pc = pose.world_to_camera(point);
    if !(pc.z > 0.0) {
        return None;
    }
    let depth = pc.z / intr.far_plane;
    if depth > 1.0 {
        return None;
    }
    let col = intr.fx * pc.x / pc.z + intr.cx;
    let row = intr.fy * pc.y / pc.z + intr.cy;
    if !(col >= 0.0 && col < intr.width as f64 && row >= 0.0 && row < intr.height as f64) {
        return None;
    }
    Some(Projection { row, col, depth })
}

/// Inverse of [`project`] for a continuous pixel coordinate.
pub fn unproject(row: f64, col: f64, depth: f64, pose: &CameraPose, intr: &Intrinsics) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!("non-positive depth {depth}")));
    }
    let z = depth * intr.far_plane;
    let pc = Vec3::new((col - intr.cx) / intr.fx * z, (row - intr.cy) / intr.fy * z, z);
    Ok(pose.camera_to_world(&pc))
}

/// Unprojects the center of integer pixel `(row, col)`.
pub fn unproject_pixel(row: usize, col: usize, depth: f64, pose: &CameraPose, intr: &Intrinsics) -> Result<Vec3> {
    unproject(row as f64 + 0.5, col as f64 + 0.5, depth, pose, intr)
}

pub fn normalize_depth(z: f64, far_plane: f64) -> f64 {
    z / far_plane
}

pub fn denormalize_depth(d: f64, far_plane: f64) -> f64 {
    d * far_plane
}

/// Per-pixel normalized depth with an explicit validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// A dense prediction: every entry is valid.
    pub fn dense(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "depth buffer of {} values for {width}x{height}",
                values.len()
            )));
        }
        let valid = values.iter().map(|&v| v > 0.0 && v <= 1.0).collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = self.idx(row, col);
        self.valid[i].then_some(self.values[i])
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.idx(row, col);
        self.values[i] = value;
        self.valid[i] = value > 0.0 && value <= 1.0;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}
