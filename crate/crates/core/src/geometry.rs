//! Pinhole cameras and ego-frame box projection.
//!
//! Frames: the ego frame is x forward, y left, z up. Camera frames are
//! x right, y down, z along the optical axis; extrinsics map ego to camera.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NEAR: f64 = 0.1;

/// Orthonormality tolerance for a rotation accepted as-is.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Intrinsics of the same camera after resizing the image to
    /// `width × height`.
    pub fn resized(&self, width: u32, height: u32) -> Intrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

impl Extrinsics {
    /// Ego→camera transform `p_cam = R·p_ego + t`. `R` must be a proper
    /// rotation within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if err > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "|RᵀR − I| = {err:.3e}, det = {det:.9}"
            )));
        }
        Ok(Extrinsics {
            rotation,
            translation,
        })
    }

    /// Accepts rotations within `tol` of orthonormal and snaps them to the
    /// nearest rotation (polar decomposition).
    pub fn orthonormalized(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        let err = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if !err.is_finite() || err > tol || (det - 1.0).abs() > tol * 3.0 {
            return Err(Error::InvalidRotation(format!(
                "|RᵀR − I| = {err:.3e}, det = {det:.6} (tolerance {tol:e})"
            )));
        }
        let svd = rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        Extrinsics::new(u * vt, translation)
    }

    /// Camera at `position` (ego frame) looking along ego yaw `yaw`, level
    /// with the ground.
    pub fn looking_at_yaw(position: Vector3<f64>, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        // Rows are the camera axes expressed in the ego frame.
        let rotation = Matrix3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
        let rotation = Rotation3::from_matrix_unchecked(rotation).into_inner();
        Extrinsics {
            rotation,
            translation: -(rotation * position),
        }
    }

    pub fn identity() -> Self {
        Extrinsics {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_camera(&self, p_ego: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_ego + self.translation
    }

    pub fn to_ego(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }
}

/// One calibrated camera of the rig.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

impl Camera {
    pub fn resized(&self, width: u32, height: u32) -> Camera {
        Camera {
            intrinsics: self.intrinsics.resized(width, height),
            extrinsics: self.extrinsics,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    /// Length (along heading), width, height.
    pub size: [f64; 3],
    pub yaw: f64,
}

impl Box3D {
    pub fn validate(&self) -> Result<()> {
        if self.size.iter().all(|&s| s > 0.0 && s.is_finite())
            && self.center.iter().all(|c| c.is_finite())
            && self.yaw.is_finite()
        {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid box {self:?}")))
        }
    }
}

/// Pixel rectangle, clamped to the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn box_corners(b: &Box3D) -> [Vector3<f64>; 8] {
    let (s, c) = b.yaw.sin_cos();
    let half = [b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0];
    let mut out = [Vector3::zeros(); 8];
    for (i, corner) in out.iter_mut().enumerate() {
        let sx = if i & 4 == 0 { -1.0 } else { 1.0 };
        let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
        let sz = if i & 1 == 0 { -1.0 } else { 1.0 };
        let (lx, ly) = (sx * half[0], sy * half[1]);
        *corner = Vector3::new(
            b.center[0] + c * lx - s * ly,
            b.center[1] + s * lx + c * ly,
            b.center[2] + sz * half[2],
        );
    }
    out
}

pub fn project_point(p_ego: &Vector3<f64>, extr: &Extrinsics, intr: &Intrinsics, near: f64) -> Result<Projected> {
    let p = extr.to_camera(p_ego);
    if p.z < near {
        return Err(Error::BehindCamera { depth: p.z, near });
    }
    Ok(Projected {
        u: intr.fx * p.x / p.z + intr.cx,
        v: intr.fy * p.y / p.z + intr.cy,
        depth: p.z,
    })
}

/// Inverse of [`project_point`].
pub fn unproject(px: &Projected, extr: &Extrinsics, intr: &Intrinsics) -> Vector3<f64> {
    let p_cam = Vector3::new(
        (px.u - intr.cx) / intr.fx * px.depth,
        (px.v - intr.cy) / intr.fy * px.depth,
        px.depth,
    );
    extr.to_ego(&p_cam)
}

/// Axis-aligned hull of the box corners in front of the near plane,
/// clamped to the image. `None` when fewer than two corners survive or
/// the clamped rectangle has no area.
pub fn project_box(b: &Box3D, extr: &Extrinsics, intr: &Intrinsics, near: f64) -> Option<Rect2D> {
    let mut count = 0;
    let (mut u_min, mut v_min) = (f64::INFINITY, f64::INFINITY);
    let (mut u_max, mut v_max) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in box_corners(b) {
        if let Ok(p) = project_point(&corner, extr, intr, near) {
            count += 1;
            u_min = u_min.min(p.u);
            u_max = u_max.max(p.u);
            v_min = v_min.min(p.v);
            v_max = v_max.max(p.v);
        }
    }
    if count < 2 {
        return None;
    }
    let (w, h) = (intr.width as f64, intr.height as f64);
    let rect = Rect2D {
        u_min: u_min.clamp(0.0, w),
        v_min: v_min.clamp(0.0, h),
        u_max: u_max.clamp(0.0, w),
        v_max: v_max.clamp(0.0, h),
    };
    (rect.u_max > rect.u_min && rect.v_max > rect.v_min).then_some(rect)
}
