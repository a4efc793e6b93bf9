//! Landing-site selection: depth conversions, attitude correction, the
//! slope/roughness safety mask, inscribed-circle candidates, temporal
//! confirmation, and the flight state machine that strings them together.

mod machine;
mod site;

pub use machine::{
    step_state_machine, CandidateTracker, Command, LandingEvent, LandingState, TrackerDecision,
    WanderPlan,
};
pub use site::{
    largest_inscribed_circle, make_candidate, safety_mask, LandingCandidate, SafetyMask,
};

use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::{backproject, CameraIntrinsics, GeometryError};
use crate::grid::{DepthKind, DepthMap};

#[derive(Debug, Error)]
pub enum LandingError {
    #[error("bad input: {reason}")]
    BadInput { reason: String },
    #[error("attitude correction lost {lost_fraction:.2} of the pixels")]
    ExcessiveTilt { lost_fraction: f64 },
    #[error("candidate centre ({row}, {col}) has no known depth")]
    UnknownCenterDepth { row: usize, col: usize },
    #[error("no transition from {state:?} on {event:?}")]
    InvalidTransition {
        state: machine::LandingState,
        event: machine::LandingEvent,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Converts ray lengths to plane depths (camera-frame z).
///
/// A map already tagged as plane depth passes through unchanged.
pub fn to_plane_depth(pred: &DepthMap, k: &CameraIntrinsics) -> DepthMap {
    if pred.kind() == DepthKind::PlaneDepth {
        return pred.clone();
    }
    let (cx, cy) = k.principal;
    let mut out = DepthMap::unknown(pred.width(), pred.height(), DepthKind::PlaneDepth);
    for (row, col, ray_len) in pred.iter_known() {
        let du = col as f64 - cx;
        let dv = row as f64 - cy;
        let scale = k.focal / (du * du + dv * dv + k.focal * k.focal).sqrt();
        out.set(row, col, Some(ray_len * scale));
    }
    out
}

/// Reprojects a plane-depth map into a virtual camera with roll and pitch
/// zeroed, simulating a nadir view from the same position.
///
/// `roll` tilts about the camera y axis and `pitch` about the camera x axis,
/// both in degrees; the actual camera attitude is taken to be
/// `Rx(pitch) * Ry(roll)` relative to nadir. Every known pixel is
/// backprojected, rotated into the nadir frame, and splatted to the nearest
/// pixel with a z-buffer; unhit pixels come back unknown.
pub fn correct_attitude(
    plane_depth: &DepthMap,
    roll_deg: f64,
    pitch_deg: f64,
    k: &CameraIntrinsics,
) -> Result<DepthMap, LandingError> {
    if roll_deg.abs() >= 60.0 || pitch_deg.abs() >= 60.0 {
        return Err(LandingError::BadInput {
            reason: format!("tilt ({roll_deg}, {pitch_deg}) degrees exceeds the 60 degree limit"),
        });
    }
    if roll_deg == 0.0 && pitch_deg == 0.0 {
        return Ok(plane_depth.clone());
    }
    let nadir_from_actual = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), pitch_deg.to_radians())
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), roll_deg.to_radians());

    let (cx, cy) = k.principal;
    let mut out = DepthMap::unknown(plane_depth.width(), plane_depth.height(), DepthKind::PlaneDepth);
    let mut total = 0usize;
    let mut landed = 0usize;
    for (row, col, depth) in plane_depth.iter_known() {
        total += 1;
        let p = match backproject((col as f64, row as f64), depth, k) {
            Ok(p) => nadir_from_actual * p,
            Err(_) => continue,
        };
        if p.z <= 0.0 {
            continue;
        }
        let u = k.focal * p.x / p.z + cx;
        let v = k.focal * p.y / p.z + cy;
        let (uc, vc) = (u.round(), v.round());
        if uc < 0.0 || vc < 0.0 || uc as usize >= k.width || vc as usize >= k.height {
            continue;
        }
        landed += 1;
        let (r, c) = (vc as usize, uc as usize);
        if out.get(r, c).map_or(true, |existing| p.z < existing) {
            out.set(r, c, Some(p.z));
        }
    }
    let lost_fraction = if total == 0 { 1.0 } else { 1.0 - landed as f64 / total as f64 };
    if lost_fraction > 0.5 {
        return Err(LandingError::ExcessiveTilt { lost_fraction });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::terrain::{build_terrain, render_frame, TerrainSpec};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn k64() -> CameraIntrinsics {
        CameraIntrinsics::centred(96.0, 64, 64).unwrap()
    }

    #[test]
    fn plane_kind_passes_through_bit_identical() {
        let map = DepthMap::constant(16, 16, 10.0, DepthKind::PlaneDepth);
        let out = to_plane_depth(&map, &CameraIntrinsics::centred(16.0, 16, 16).unwrap());
        assert_eq!(out, map);
    }

    #[test]
    fn ray_depth_scales_by_ray_angle() {
        let k = CameraIntrinsics::new(8.0, (8.0, 8.0), 17, 17).unwrap();
        let map = DepthMap::constant(17, 17, 10.0, DepthKind::RayDepth);
        let out = to_plane_depth(&map, &k);
        assert_eq!(out.kind(), DepthKind::PlaneDepth);
        // Principal-point pixel is unchanged.
        assert_relative_eq!(out.get(8, 8).unwrap(), 10.0, epsilon = 1e-12);
        // Offset f to the side means a 45 degree ray.
        assert_relative_eq!(out.get(8, 16).unwrap(), 10.0 / 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn zero_tilt_is_identity() {
        let map = DepthMap::constant(16, 16, 9.0, DepthKind::PlaneDepth);
        let out = correct_attitude(&map, 0.0, 0.0, &CameraIntrinsics::centred(16.0, 16, 16).unwrap())
            .unwrap();
        assert_eq!(out, map);
    }

    #[test]
    fn tilt_limit_is_enforced() {
        let map = DepthMap::constant(16, 16, 9.0, DepthKind::PlaneDepth);
        let k = CameraIntrinsics::centred(16.0, 16, 16).unwrap();
        assert!(matches!(
            correct_attitude(&map, 0.0, 61.0, &k),
            Err(LandingError::BadInput { .. })
        ));
    }

    #[test]
    fn pitched_view_of_flat_ground_corrects_to_constant() {
        let terrain = build_terrain(&TerrainSpec::flat(80.0), 3).unwrap();
        let k = k64();
        let pitch_deg = 10.0_f64;
        let nadir = UnitQuaternion::from_scaled_axis(Vector3::x() * std::f64::consts::PI);
        let tilt = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), pitch_deg.to_radians());
        let pose = crate::geometry::Transform::new(nadir * tilt, Vector3::new(0.0, 0.0, 12.0));
        let frame = render_frame(&terrain, &pose, &k).unwrap();

        let corrected = correct_attitude(&frame.true_depth, 0.0, pitch_deg, &k).unwrap();
        assert!(corrected.known_count() > 2048);
        for (_, _, d) in corrected.iter_known() {
            assert!((d - 12.0).abs() < 0.02, "corrected depth {d} should be 12 m");
        }

        // Pitch makes the raw plane depth ramp along image rows.
        let spread = |map: &DepthMap| {
            let mut worst: f64 = 0.0;
            for c in 0..map.width() {
                for r in 1..map.height() {
                    if let (Some(a), Some(b)) = (map.get(r - 1, c), map.get(r, c)) {
                        worst = worst.max((b - a).abs());
                    }
                }
            }
            worst
        };
        assert!(spread(&corrected) < spread(&frame.true_depth));
    }

    #[test]
    fn extreme_tilt_reports_lost_pixels() {
        // A map whose points mostly rotate out of the frame.
        let mut grid = Grid::filled(32, 32, f64::NAN);
        for r in 0..32 {
            for c in 0..32 {
                *grid.get_mut(r, c) = 5.0;
            }
        }
        let map = DepthMap::from_grid(grid, DepthKind::PlaneDepth);
        let k = CameraIntrinsics::centred(48.0, 32, 32).unwrap();
        let err = correct_attitude(&map, 0.0, 55.0, &k);
        assert!(matches!(err, Err(LandingError::ExcessiveTilt { .. })));
    }
}
