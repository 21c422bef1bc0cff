//! Pinhole camera geometry: rigid world→camera transform, projection to the
//! physical image plane, and conversion to pixel coordinates.
//!
//! Conventions: world units are millimeters, the ground plane is world z=0.
//! Camera space is right-handed with +z looking into the scene and +y down,
//! so pixel v grows downward. Focal length and pixel pitch are in
//! millimeters; pixel coordinates stay continuous until rasterization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points closer than this to the camera plane (in mm) count as behind it.
pub const EPS_NEAR_MM: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum CamError {
    #[error("point is behind the camera (z_c = {z_c} mm <= {EPS_NEAR_MM} mm)")]
    BehindCamera { z_c: f64 },
    #[error("vertex set is empty")]
    EmptyVertexSet,
    #[error("rotation matrix is not orthonormal (max |R R^T - I| = {deviation})")]
    NotARotation { deviation: f64 },
    #[error("rotation matrix determinant {det} is not +1")]
    NotRightHanded { det: f64 },
    #[error("intrinsics field {field} must be strictly positive, got {value}")]
    NonPositiveIntrinsic { field: &'static str, value: f64 },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
}

/// Point in world coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3World {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3World {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Point in camera coordinates (mm), +z in front of the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3Cam {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3Cam {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn mul_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul(&self, rhs: &Mat3) -> Mat3 {
        let mut out = [[0.0f64; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Rotation about the world z axis by `angle` radians.
    pub fn rotation_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }
}

/// Camera pose: `p_cam = R p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    rotation: Mat3,
    translation: [f64; 3],
}

impl Extrinsics {
    const ORTHO_TOL: f64 = 1e-9;

    pub fn new(rotation: Mat3, translation: [f64; 3]) -> Result<Self, CamError> {
        for row in rotation.0 {
            for v in row {
                if !v.is_finite() {
                    return Err(CamError::NonFinite { what: "rotation" });
                }
            }
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(CamError::NonFinite {
                what: "translation",
            });
        }
        let rrt = rotation.mul(&rotation.transpose());
        let mut deviation = 0.0f64;
        for (i, row) in rrt.0.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                deviation = deviation.max((v - target).abs());
            }
        }
        if deviation > Self::ORTHO_TOL {
            return Err(CamError::NotARotation { deviation });
        }
        let det = rotation.det();
        if (det - 1.0).abs() > Self::ORTHO_TOL {
            return Err(CamError::NotRightHanded { det });
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::IDENTITY,
            translation: [0.0; 3],
        }
    }

    /// Pose looking from `eye` toward `target`. `world_up` picks the image
    /// "up" direction; it must not be parallel to the view direction.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], world_up: [f64; 3]) -> Result<Self, CamError> {
        let fwd = normalize(sub(target, eye)).ok_or(CamError::NonFinite { what: "look_at" })?;
        // x_cam = forward x up points right; y_cam = forward x x_cam points
        // down, which matches v growing downward.
        let right =
            normalize(cross(fwd, world_up)).ok_or(CamError::NonFinite { what: "look_at" })?;
        let down = cross(fwd, right);
        let rotation = Mat3([right, down, fwd]);
        let e = rotation.mul_vec(eye);
        Self::new(rotation, [-e[0], -e[1], -e[2]])
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }

    /// The composed homogeneous transform `[R t; 0 1]`.
    pub fn as_homogeneous(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation.0;
        let t = &self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n < 1e-12 || !n.is_finite() {
        return None;
    }
    Some([v[0] / n, v[1] / n, v[2] / n])
}

/// Internal camera parameters. Focal length and pixel pitch in mm,
/// principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub f_mm: f64,
    pub dx_mm: f64,
    pub dy_mm: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(
        f_mm: f64,
        dx_mm: f64,
        dy_mm: f64,
        u0: f64,
        v0: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, CamError> {
        for (field, value) in [("f_mm", f_mm), ("dx_mm", dx_mm), ("dy_mm", dy_mm)] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(CamError::NonPositiveIntrinsic { field, value });
            }
        }
        if width == 0 || height == 0 {
            return Err(CamError::NonPositiveIntrinsic {
                field: "width/height",
                value: 0.0,
            });
        }
        if !u0.is_finite() || !v0.is_finite() {
            return Err(CamError::NonFinite {
                what: "principal point",
            });
        }
        Ok(Self {
            f_mm,
            dx_mm,
            dy_mm,
            u0,
            v0,
            width,
            height,
        })
    }
}

/// Continuous pixel position plus the camera-space depth it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
    /// z_c in mm; positive for anything projection produces.
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub extrinsics: Extrinsics,
    pub intrinsics: Intrinsics,
}

impl CameraModel {
    pub fn new(extrinsics: Extrinsics, intrinsics: Intrinsics) -> Self {
        Self {
            extrinsics,
            intrinsics,
        }
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }
}

/// Rigid transform into camera coordinates: `R p + t`.
pub fn world_to_camera(p: Vec3World, ext: &Extrinsics) -> Vec3Cam {
    let r = ext.rotation.mul_vec([p.x, p.y, p.z]);
    let t = ext.translation;
    Vec3Cam::new(r[0] + t[0], r[1] + t[1], r[2] + t[2])
}

/// Perspective projection onto the sensor, then into pixel coordinates:
/// `u = (f x_c / z_c) / d_x + u_0`, `v = (f y_c / z_c) / d_y + v_0`.
/// The result may lie outside the image; clipping is the caller's job.
pub fn camera_to_pixel(p: Vec3Cam, intr: &Intrinsics) -> Result<PixelPoint, CamError> {
    if !(p.z > EPS_NEAR_MM) {
        return Err(CamError::BehindCamera { z_c: p.z });
    }
    let x_u = intr.f_mm * p.x / p.z;
    let y_u = intr.f_mm * p.y / p.z;
    Ok(PixelPoint {
        u: x_u / intr.dx_mm + intr.u0,
        v: y_u / intr.dy_mm + intr.v0,
        depth: p.z,
    })
}

/// Full chain `world -> camera -> pixel`.
pub fn project(p: Vec3World, cam: &CameraModel) -> Result<PixelPoint, CamError> {
    camera_to_pixel(world_to_camera(p, &cam.extrinsics), &cam.intrinsics)
}

/// Continuous bounding box over projected vertices, clipped to the image
/// rectangle `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullBBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
    /// True when the unclipped box exceeded the image rectangle.
    pub truncated: bool,
}

/// Axis-aligned box over all projectable vertices, intersected with the
/// image rectangle. `None` when every vertex is behind the camera or the
/// clipped box is empty.
pub fn project_bbox(vertices: &[Vec3World], cam: &CameraModel) -> Result<Option<FullBBox>, CamError> {
    if vertices.is_empty() {
        return Err(CamError::EmptyVertexSet);
    }
    let mut u_min = f64::INFINITY;
    let mut v_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    let mut any = false;
    for &v in vertices {
        match project(v, cam) {
            Ok(px) => {
                any = true;
                u_min = u_min.min(px.u);
                v_min = v_min.min(px.v);
                u_max = u_max.max(px.u);
                v_max = v_max.max(px.v);
            }
            Err(CamError::BehindCamera { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    if !any {
        return Ok(None);
    }
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    let truncated = u_min < 0.0 || v_min < 0.0 || u_max > w || v_max > h;
    let clipped = FullBBox {
        u_min: u_min.max(0.0),
        v_min: v_min.max(0.0),
        u_max: u_max.min(w),
        v_max: v_max.min(h),
        truncated,
    };
    if clipped.u_min > clipped.u_max || clipped.v_min > clipped.v_max {
        return Ok(None);
    }
    Ok(Some(clipped))
}
