use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Vec3;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    BadFocal { fx: f64, fy: f64 },
    #[error("image size must be at least 1x1 (got {width}x{height})")]
    BadSize { width: usize, height: usize },
    #[error("extrinsic rotation is not a proper rotation matrix")]
    NotRotation,
    #[error("point is behind the camera (camera-space z = {0})")]
    BehindCamera(f64),
}

/// A projected point: continuous pixel coordinates plus camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

/// Pinhole camera. World points map to camera space as `R·p + t`; the camera
/// looks down +Z and pixel `(i, j)` (row, column) sits at continuous location
/// `(x, y) = (j, i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFields", into = "CameraFields")]
pub struct Camera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: [[f64; 3]; 3],
    translation: Vec3,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct CameraFields {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    #[serde(default = "identity")]
    rotation: [[f64; 3]; 3],
    #[serde(default)]
    translation: Vec3,
    width: usize,
    height: usize,
}

fn identity() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

impl TryFrom<CameraFields> for Camera {
    type Error = CameraError;
    fn try_from(c: CameraFields) -> Result<Self, Self::Error> {
        Camera::new(c.fx, c.fy, c.cx, c.cy, c.rotation, c.translation, c.width, c.height)
    }
}

impl From<Camera> for CameraFields {
    fn from(c: Camera) -> Self {
        CameraFields {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: c.rotation,
            translation: c.translation,
            width: c.width,
            height: c.height,
        }
    }
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: [[f64; 3]; 3],
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::BadFocal { fx, fy });
        }
        if width == 0 || height == 0 {
            return Err(CameraError::BadSize { width, height });
        }
        if !is_rotation(&rotation) {
            return Err(CameraError::NotRotation);
        }
        Ok(Self { fx, fy, cx, cy, rotation, translation, width, height })
    }

    /// Camera with identity orientation placed at world position `center`.
    pub fn at_center(fx: f64, fy: f64, cx: f64, cy: f64, center: Vec3, width: usize, height: usize) -> Result<Self, CameraError> {
        Self::new(fx, fy, cx, cy, identity(), center.map(|c| -c), width, height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn focal(&self) -> (f64, f64) {
        (self.fx, self.fy)
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    /// The same camera with intrinsics rescaled to a `width`×`height` image,
    /// so projected coordinates are multiplied by `(width/W, height/H)`.
    pub fn rescaled(&self, width: usize, height: usize) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    #[inline]
    pub fn to_camera_space(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    /// Pixel coordinates of a camera-space point, without any depth check.
    #[inline]
    pub fn project_camera_space(&self, c: Vec3) -> (f64, f64) {
        (self.fx * (c[0] / c[2]) + self.cx, self.fy * (c[1] / c[2]) + self.cy)
    }

    pub fn project_point(&self, p: Vec3) -> Result<ImagePoint, CameraError> {
        let c = self.to_camera_space(p);
        if c[2] <= 0.0 {
            return Err(CameraError::BehindCamera(c[2]));
        }
        let (x, y) = self.project_camera_space(c);
        Ok(ImagePoint { x, y, depth: c[2] })
    }

    /// Pulls a gradient on the pixel coordinates of world point `p` back to
    /// world space. `p` must be in front of the camera.
    #[inline]
    pub fn project_vjp(&self, p: Vec3, grad_x: f64, grad_y: f64) -> Vec3 {
        let c = self.to_camera_space(p);
        let inv_z = 1.0 / c[2];
        let gcx = grad_x * self.fx * inv_z;
        let gcy = grad_y * self.fy * inv_z;
        let gcz = -(grad_x * self.fx * c[0] + grad_y * self.fy * c[1]) * inv_z * inv_z;
        self.rotate_back([gcx, gcy, gcz])
    }

    /// Applies `Rᵀ` to a camera-space vector.
    #[inline]
    pub fn rotate_back(&self, g: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * g[0] + r[1][0] * g[1] + r[2][0] * g[2],
            r[0][1] * g[0] + r[1][1] * g[1] + r[2][1] * g[2],
            r[0][2] * g[0] + r[1][2] * g[1] + r[2][2] * g[2],
        ]
    }

    /// Gradient of camera-space depth with respect to the world point.
    pub fn depth_direction(&self) -> Vec3 {
        self.rotation[2]
    }
}

fn is_rotation(r: &[[f64; 3]; 3]) -> bool {
    for i in 0..3 {
        for j in 0..3 {
            let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
            let expect = if i == j { 1.0 } else { 0.0 };
            if !((d - expect).abs() <= ORTHONORMAL_TOL) {
                return false;
            }
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    (det - 1.0).abs() <= ORTHONORMAL_TOL
}
