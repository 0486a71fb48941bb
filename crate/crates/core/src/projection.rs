//! Pinhole camera and 3D-to-2D projection.
//!
//! Pixel-center convention: integer coordinate (u, v) addresses the center
//! of pixel (u, v); continuous coordinates live in [-0.5, W-0.5) x
//! [-0.5, H-0.5). The rasterizer and bilinear sampler use the identical
//! convention.

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::template::PosedVertices;

/// Calibrated pinhole camera, extrinsics world-to-camera.
#[derive(Debug, Clone)]
pub struct Camera {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f32,
        fy: f32,
        cx: f32,
        cy: f32,
        rotation: Mat3,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Camera> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::config(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if width < 1 || height < 1 {
            return Err(Error::config("camera resolution must be at least 1x1"));
        }
        if !rotation.is_rotation(1e-6) {
            return Err(Error::config("camera rotation is not orthonormal with det +1"));
        }
        Ok(Camera { fx, fy, cx, cy, rotation, translation, width, height })
    }

    /// World point to camera space.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Inverse of the projection post-formula: pixel + depth back to world.
    pub fn unproject(&self, px: f32, py: f32, depth: f32) -> Vec3 {
        let xc = (px - self.cx) / self.fx * depth;
        let yc = (py - self.cy) / self.fy * depth;
        let cam = Vec3 { x: xc, y: yc, z: depth };
        self.rotation.transpose() * (cam - self.translation)
    }
}

/// Continuous pixel coordinates and camera-space depths for a point set.
///
/// `depths[v]` is always the camera-space z value; `in_front[v]` is true
/// exactly when that z exceeds the near epsilon (1e-6), at which point the
/// pixel is meaningful. Behind-camera points carry the sentinel (-1, -1).
#[derive(Debug, Clone)]
pub struct ProjectedPoints {
    pub pixels: Vec<(f32, f32)>,
    pub depths: Vec<f32>,
    pub in_front: Vec<bool>,
}

const NEAR_EPS: f32 = 1e-6;

/// Projects posed vertices through a pinhole camera.
pub fn project(points: &PosedVertices, camera: &Camera) -> ProjectedPoints {
    let mut pixels = Vec::with_capacity(points.positions.len());
    let mut depths = Vec::with_capacity(points.positions.len());
    let mut in_front = Vec::with_capacity(points.positions.len());
    for &p in &points.positions {
        let c = camera.to_camera(p);
        depths.push(c.z);
        if c.z > NEAR_EPS {
            pixels.push((camera.fx * c.x / c.z + camera.cx, camera.fy * c.y / c.z + camera.cy));
            in_front.push(true);
        } else {
            pixels.push((-1.0, -1.0));
            in_front.push(false);
        }
    }
    ProjectedPoints { pixels, depths, in_front }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::vec3;

    fn cam_identity(fx: f32, fy: f32, cx: f32, cy: f32) -> Camera {
        Camera::new(fx, fy, cx, cy, Mat3::IDENTITY, Vec3::ZERO, 128, 128).unwrap()
    }

    fn posed(ps: Vec<Vec3>) -> PosedVertices {
        PosedVertices { positions: ps, frame_time: 0 }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = cam_identity(100.0, 100.0, 64.0, 64.0);
        let out = project(&posed(vec![vec3(0.0, 0.0, 2.5)]), &cam);
        assert_eq!(out.pixels[0], (64.0, 64.0));
        assert_eq!(out.depths[0], 2.5);
        assert!(out.in_front[0]);
    }

    #[test]
    fn behind_camera_gets_sentinel() {
        let cam = cam_identity(100.0, 100.0, 64.0, 64.0);
        let out = project(&posed(vec![vec3(0.1, 0.2, -1.0), vec3(0.0, 0.0, 0.0)]), &cam);
        for v in 0..2 {
            assert!(!out.in_front[v]);
            assert_eq!(out.pixels[v], (-1.0, -1.0));
        }
        assert_eq!(out.depths[0], -1.0);
    }

    #[test]
    fn hand_evaluated_pinhole() {
        let cam = cam_identity(100.0, 100.0, 64.0, 64.0);
        let out = project(&posed(vec![vec3(0.32, 0.0, 1.0)]), &cam);
        assert_eq!(out.pixels[0], (96.0, 64.0));
        assert_eq!(out.depths[0], 1.0);
    }

    #[test]
    fn scale_invariance_along_ray() {
        let cam = cam_identity(80.0, 90.0, 32.0, 40.0);
        let p = vec3(0.2, -0.3, 1.7);
        let a = project(&posed(vec![p]), &cam);
        let b = project(&posed(vec![p * 3.0]), &cam);
        assert!((a.pixels[0].0 - b.pixels[0].0).abs() < 1e-4);
        assert!((a.pixels[0].1 - b.pixels[0].1).abs() < 1e-4);
        assert!((b.depths[0] - 3.0 * a.depths[0]).abs() < 1e-5);
    }

    #[test]
    fn unproject_roundtrip() {
        let rot = crate::math::Quat::from_axis_angle(vec3(0.3, 1.0, 0.2), 0.8).to_mat3();
        let cam =
            Camera::new(120.0, 110.0, 63.5, 63.5, rot, vec3(0.1, -0.2, 3.0), 128, 128).unwrap();
        let p = vec3(0.4, 0.25, -0.6);
        let out = project(&posed(vec![p]), &cam);
        assert!(out.in_front[0]);
        let back = cam.unproject(out.pixels[0].0, out.pixels[0].1, out.depths[0]);
        assert!((back - p).norm() < 1e-5);
    }

    #[test]
    fn camera_validation() {
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, Mat3::IDENTITY, Vec3::ZERO, 4, 4).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, Mat3::IDENTITY, Vec3::ZERO, 0, 4).is_err());
        let skew = Mat3::from_rows([1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, skew, Vec3::ZERO, 4, 4).is_err());
    }
}
