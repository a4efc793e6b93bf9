//! Safety mask and landing-site candidates.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::depth_fusion::squared_distance_field;
use crate::geometry::{backproject, CameraIntrinsics, Transform};
use crate::grid::{DepthMap, Mask};

use super::LandingError;

/// Binary safe/unsafe classification of a corrected depth map.
#[derive(Clone)]
pub struct SafetyMask {
    /// Per-pixel slope and roughness verdict.
    pub raw: Mask,
    /// `raw` after opening then closing, which drops safe slivers and fills
    /// unsafe pinholes smaller than the structuring disc.
    pub refined: Mask,
    pub t_inc_deg: f64,
    pub t_tur_deg: f64,
}

impl SafetyMask {
    pub fn safe_fraction(&self) -> f64 {
        let n = self.refined.len();
        self.refined.as_slice().iter().filter(|&&s| s).count() as f64 / n as f64
    }
}

/// Classifies each pixel of a nadir-corrected plane-depth map.
///
/// The metric ground span of one pixel at depth `d` is `d / f`, so the
/// dimensionless rise over run of the depth gradient is `|grad| * f / d` and
/// the slope angle is its arctangent; the roughness angle does the same with
/// the 5-point Laplacian. Unknown pixels are unsafe, and unknown or
/// off-image neighbours are treated as repeats of the centre, which makes a
/// constant map safe all the way to its borders.
pub fn safety_mask(
    pred_c: &DepthMap,
    k: &CameraIntrinsics,
    t_inc_deg: f64,
    t_tur_deg: f64,
    morph_radius: usize,
) -> Result<SafetyMask, LandingError> {
    for (name, t) in [("slope", t_inc_deg), ("roughness", t_tur_deg)] {
        if !(t > 0.0 && t < 90.0) {
            return Err(LandingError::BadInput {
                reason: format!("{name} threshold {t} degrees outside (0, 90)"),
            });
        }
    }
    let (w, h) = (pred_c.width(), pred_c.height());
    let mut raw = Mask::filled(w, h, false);
    let neighbor = |r: usize, c: usize, dr: isize, dc: isize, center: f64| -> f64 {
        let (rr, cc) = (r as isize + dr, c as isize + dc);
        if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
            return center;
        }
        pred_c.get(rr as usize, cc as usize).unwrap_or(center)
    };
    for (r, c, d) in pred_c.iter_known() {
        let pitch = d / k.focal;
        let left = neighbor(r, c, 0, -1, d);
        let right = neighbor(r, c, 0, 1, d);
        let up = neighbor(r, c, -1, 0, d);
        let down = neighbor(r, c, 1, 0, d);
        let gx = (right - left) / 2.0;
        let gy = (down - up) / 2.0;
        let slope = ((gx * gx + gy * gy).sqrt() / pitch).atan().to_degrees();
        let lap = left + right + up + down - 4.0 * d;
        let rough = (lap.abs() / pitch).atan().to_degrees();
        if slope < t_inc_deg && rough < t_tur_deg {
            *raw.get_mut(r, c) = true;
        }
    }
    let disc = disc_offsets(morph_radius);
    let opened = dilate(&erode(&raw, &disc), &disc);
    let refined = erode(&dilate(&opened, &disc), &disc);
    Ok(SafetyMask {
        raw,
        refined,
        t_inc_deg,
        t_tur_deg,
    })
}

fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offsets = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                offsets.push((dr, dc));
            }
        }
    }
    offsets
}

/// Erosion with outside-the-image counting as unsafe.
fn erode(mask: &Mask, disc: &[(isize, isize)]) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = Mask::filled(w, h, false);
    for r in 0..h {
        'pixel: for c in 0..w {
            for &(dr, dc) in disc {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                    continue 'pixel;
                }
                if !*mask.get(rr as usize, cc as usize) {
                    continue 'pixel;
                }
            }
            *out.get_mut(r, c) = true;
        }
    }
    out
}

fn dilate(mask: &Mask, disc: &[(isize, isize)]) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = Mask::filled(w, h, false);
    for r in 0..h {
        for c in 0..w {
            if *mask.get(r, c) {
                for &(dr, dc) in disc {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        *out.get_mut(rr as usize, cc as usize) = true;
                    }
                }
            }
        }
    }
    out
}

/// Largest circle that fits inside the safe region, image borders counting
/// as unsafe.
///
/// Returns the centre pixel and radius in pixels, `None` when no pixel is
/// safe. Ties go to the smallest row, then the smallest column.
pub fn largest_inscribed_circle(mask: &Mask) -> Option<((usize, usize), f64)> {
    let (w, h) = (mask.width(), mask.height());
    // Pad with an unsafe ring so the transform sees the border.
    let mut sites = Mask::filled(w + 2, h + 2, true);
    for r in 0..h {
        for c in 0..w {
            *sites.get_mut(r + 1, c + 1) = !*mask.get(r, c);
        }
    }
    let dist2 = squared_distance_field(&sites);
    let mut best: Option<((usize, usize), i64)> = None;
    for r in 0..h {
        for c in 0..w {
            if !*mask.get(r, c) {
                continue;
            }
            let d2 = dist2[(r + 1) * (w + 2) + (c + 1)];
            if best.map_or(true, |(_, bd)| d2 > bd) {
                best = Some(((r, c), d2));
            }
        }
    }
    best.map(|((r, c), d2)| ((r, c), (d2 as f64).sqrt()))
}

/// A confirmed-size safe area in both pixel and metric terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingCandidate {
    /// Centre as `(row, col)`.
    pub center_px: (usize, usize),
    pub radius_px: f64,
    /// Plane depth at the centre, metres.
    pub center_plane_depth: f64,
    /// Metric radius `R = p / f * r`.
    pub radius_m: f64,
    /// Centre on the ground in the world frame.
    pub world_position: [f64; 3],
}

impl LandingCandidate {
    pub fn world_point(&self) -> Vector3<f64> {
        Vector3::new(self.world_position[0], self.world_position[1], self.world_position[2])
    }
}

/// Scales an inscribed circle to metres and keeps it only when strictly
/// larger than `min_radius_m`.
pub fn make_candidate(
    center_px: (usize, usize),
    radius_px: f64,
    pred_c: &DepthMap,
    k: &CameraIntrinsics,
    camera_pose: &Transform,
    min_radius_m: f64,
) -> Result<Option<LandingCandidate>, LandingError> {
    let (row, col) = center_px;
    let Some(p) = pred_c.get(row, col) else {
        return Err(LandingError::UnknownCenterDepth { row, col });
    };
    let radius_m = p / k.focal * radius_px;
    if radius_m <= min_radius_m {
        return Ok(None);
    }
    let cam_point = backproject((col as f64, row as f64), p, k)?;
    let world = camera_pose.apply(&cam_point);
    Ok(Some(LandingCandidate {
        center_px,
        radius_px,
        center_plane_depth: p,
        radius_m,
        world_position: [world.x, world.y, world.z],
    }))
}
