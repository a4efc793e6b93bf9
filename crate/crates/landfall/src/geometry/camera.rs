//! Pinhole camera model with a single focal length and no distortion.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Intrinsics of a square-pixel pinhole camera.
///
/// `focal` is in pixels; `principal` is `(cx, cy)` in pixel coordinates and
/// must lie inside the image rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub principal: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        focal: f64,
        principal: (f64, f64),
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(GeometryError::BadIntrinsics {
                reason: format!("focal length must be positive, got {focal}"),
            });
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::BadIntrinsics {
                reason: "image dimensions must be non-zero".into(),
            });
        }
        let (cx, cy) = principal;
        if !(cx.is_finite() && cy.is_finite())
            || cx < 0.0
            || cy < 0.0
            || cx > (width - 1) as f64
            || cy > (height - 1) as f64
        {
            return Err(GeometryError::BadIntrinsics {
                reason: format!("principal point ({cx}, {cy}) must lie inside the {width}x{height} image"),
            });
        }
        Ok(Self { focal, principal, width, height })
    }

    /// Intrinsics with the principal point at the image centre.
    pub fn centred(focal: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        Self::new(
            focal,
            ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            width,
            height,
        )
    }

    /// True if continuous pixel coordinates land inside the image rectangle.
    pub fn in_image(&self, pixel: (f64, f64)) -> bool {
        pixel.0 >= 0.0
            && pixel.1 >= 0.0
            && pixel.0 <= (self.width - 1) as f64
            && pixel.1 <= (self.height - 1) as f64
    }

    /// Unit ray direction in the camera frame through pixel `(u, v)`.
    pub fn ray(&self, pixel: (f64, f64)) -> Vector3<f64> {
        let (cx, cy) = self.principal;
        Vector3::new(pixel.0 - cx, pixel.1 - cy, self.focal).normalize()
    }
}

/// Projects a camera-frame point to continuous pixel coordinates
/// `(f*x/z + cx, f*y/z + cy)`. The point may project outside the image;
/// callers clip. Points at or behind the camera plane are an error.
pub fn project(point: &Vector3<f64>, k: &CameraIntrinsics) -> Result<(f64, f64), GeometryError> {
    if !(point.z > 0.0) {
        return Err(GeometryError::BehindCamera { z: point.z });
    }
    let (cx, cy) = k.principal;
    Ok((k.focal * point.x / point.z + cx, k.focal * point.y / point.z + cy))
}

/// Camera-frame point for a pixel at the given plane depth (camera-frame z).
pub fn backproject(
    pixel: (f64, f64),
    plane_depth: f64,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if !(plane_depth.is_finite() && plane_depth > 0.0) {
        return Err(GeometryError::NonFinite { what: "plane depth" });
    }
    let (cx, cy) = k.principal;
    Ok(Vector3::new(
        (pixel.0 - cx) / k.focal * plane_depth,
        (pixel.1 - cy) / k.focal * plane_depth,
        plane_depth,
    ))
}
