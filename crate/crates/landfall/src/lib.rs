//! Landing-site perception for low-altitude flight over unknown terrain.
//!
//! The crate simulates the full sensing stack of a small rotorcraft looking
//! straight down: a non-repetitive-scan LiDAR, a grayscale camera, procedural
//! terrain with known ground truth, and the processing chain that turns those
//! inputs into a confirmed safe landing site. The pieces are usable on their
//! own; the [`harness`] module wires them into closed-loop episodes.
//!
//! Processing chain, in data-flow order:
//!
//! 1. [`geometry`]: rigid transforms, pose tracks, the pinhole camera model,
//!    and PnP extrinsic calibration.
//! 2. [`lidar`]: rosette scan pattern, angular coverage, and cloud sampling
//!    against a terrain.
//! 3. [`terrain`]: procedural heightfields with an analytic safety oracle,
//!    plus camera rendering.
//! 4. [`depth_fusion`]: motion-compensated projection of point clouds into a
//!    camera frame as sparse depth.
//! 5. [`predictor`]: dense depth from one image plus sparse returns, by direct
//!    minimisation of a four-term objective; includes the streaming
//!    accumulate-until-accepted loop.
//! 6. [`image_quality`]: SSIM and the stereo self-check that decides whether a
//!    prediction is trustworthy.
//! 7. [`landing`]: attitude correction, per-pixel safety, largest inscribed
//!    circle, candidate tracking, and the flight behaviour state machine.
//! 8. [`harness`]: seeded end-to-end episodes, dataset export, and aggregate
//!    verdicts against the terrain oracle.
//!
//! Conventions used throughout: right-handed coordinates, camera looks along
//! +z with x right and y down, pixel (0, 0) at the top-left, depth stored as
//! z-distance to the image plane (not ray length) unless a type says
//! otherwise, metres and seconds everywhere, `f64` everywhere.
//!
//! Every runnable capability has a dedicated example under `examples/`:
//! `scan_coverage`, `calibrate_extrinsics`, `depth_completion`,
//! `self_evaluation`, `landing_site`, `full_episode`, `export_dataset`.

pub mod depth_fusion;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod image_quality;
pub mod io;
pub mod landing;
pub mod lidar;
pub mod predictor;
pub mod terrain;
