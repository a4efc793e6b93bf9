//! Rigid-body geometry: transforms, timed pose tracks, the pinhole camera,
//! and PnP extrinsic calibration.
//!
//! A [`Transform`] maps points from its source frame into its target frame,
//! `p_target = R * p_source + t`. Composition reads right to left:
//! `a.compose(&b)` applies `b` first. Pose tracks store sensor-to-world
//! transforms indexed by strictly increasing timestamps.

mod camera;
mod pnp;
mod track;
mod transform;

pub use camera::{backproject, project, CameraIntrinsics};
pub use pnp::{solve_pnp, Correspondence, PnpSolution};
pub use track::{interpolate_pose, PoseTrack, TimedPose};
pub use transform::{slerp, Transform};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("timestamp {t} is outside the track span [{start}, {end}]")]
    OutsideTrack { t: f64, start: f64, end: f64 },
    #[error("pose track is empty")]
    EmptyTrack,
    #[error("timestamps must be strictly increasing: {prev} then {next}")]
    NonMonotonicTrack { prev: f64, next: f64 },
    #[error("PnP needs at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("degenerate correspondence geometry, linear system is rank deficient")]
    DegenerateGeometry,
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("invalid camera intrinsics: {reason}")]
    BadIntrinsics { reason: String },
}
