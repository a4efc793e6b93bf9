//! Closed-loop episodes, flight-log dataset export, and metric aggregation.
//!
//! An episode puts the whole stack in a loop against a synthetic terrain:
//! sensors are simulated from the vehicle's pose, depth completion runs
//! until its self-check accepts, the landing pipeline proposes a site, the
//! tracker and state machine decide, and a kinematic vehicle executes the
//! command. The terrain's analytic safety oracle, not the pipeline's own
//! mask, judges the final touchdown.

mod dataset;
mod episode;
mod metrics;

pub use dataset::{export_depth_dataset, record_flight_log, ExportSummary, FlightLogSpec, LogCalibration};
pub use episode::{nadir_pose, run_episode, EpisodeOutcome, EpisodeReport, FrameLogEntry};
pub use metrics::{
    aggregate_metrics, density_sweep, read_records_csv, sample_sparse_from, write_records_csv,
    write_summary_csv, DensitySweepConfig, FrameRecord, SummaryRow, DENSITY_BUCKETS,
};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth_fusion::FusionError;
use crate::geometry::{CameraIntrinsics, GeometryError};
use crate::image_quality::QualityError;
use crate::io::IoError;
use crate::landing::LandingError;
use crate::lidar::{LidarError, ScanPattern};
use crate::predictor::{LossWeights, PredictorError, RefineOptions};
use crate::terrain::{TerrainError, TerrainFeature, TerrainSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid episode config: {reason}")]
    BadConfig { reason: String },
    #[error("cannot ingest {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },
    #[error("{path} row {row}: {reason}")]
    Schema { path: PathBuf, row: usize, reason: String },
    #[error("no records to aggregate")]
    EmptyInput,
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lidar(#[from] LidarError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Landing(#[from] LandingError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Slope/roughness limits, minimum usable radius, and the completion
/// deadline used by an episode's perception stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyThresholds {
    pub t_inc_deg: f64,
    pub t_tur_deg: f64,
    pub min_radius_m: f64,
    pub deadline_s: f64,
}

impl Default for SafetyThresholds {
    fn default() -> Self {
        Self {
            t_inc_deg: 10.0,
            t_tur_deg: 20.0,
            min_radius_m: 2.0,
            deadline_s: 1.0,
        }
    }
}

/// Commanded speeds the kinematic vehicle executes exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Kinematics {
    pub horizontal_speed_mps: f64,
    pub descent_speed_mps: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Self {
            horizontal_speed_mps: 2.0,
            descent_speed_mps: 1.0,
        }
    }
}

// The focal length bounds how fine a ground pitch the safety mask judges
// slopes at; with millimetre range noise, pitches much under a decimetre at
// the confirm altitude turn the roughness test into a coin flip.
fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::centred(64.0, 64, 64).expect("valid default intrinsics")
}

// The scan cone must cover the camera's half-diagonal (35 degrees for the
// default intrinsics), or the image corners only ever see extrapolated
// depth and the safety mask grows an artificial unsafe ring.
fn default_scan() -> ScanPattern {
    ScanPattern {
        fov_half_angle_deg: 36.0,
        points_per_second: 20_000.0,
        ..ScanPattern::default()
    }
}

// Wide enough that a correct completion warps the right image onto the left
// with at least a couple of pixels of disparity at working altitude;
// sub-pixel disparity starves the self-check of signal.
fn default_baseline() -> f64 {
    0.3
}

fn default_start_altitude() -> f64 {
    12.0
}

fn default_camera_hz() -> f64 {
    20.0
}

fn default_lidar_hz() -> f64 {
    10.0
}

fn default_frame_budget() -> usize {
    3_000
}

fn default_range_noise() -> f64 {
    0.005
}

fn default_max_range() -> f64 {
    120.0
}

fn default_confirm_altitude() -> f64 {
    8.0
}

fn default_touchdown_altitude() -> f64 {
    0.5
}

fn default_cloud_window() -> f64 {
    1.0
}

fn default_wander_cell() -> f64 {
    5.0
}

fn default_episode_refine() -> RefineOptions {
    RefineOptions {
        max_iters: 60,
        ..RefineOptions::default()
    }
}

/// Everything one closed-loop run depends on. JSON-serialisable; omitted
/// fields take the defaults listed on each accessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub terrain: TerrainSpec,
    #[serde(default)]
    pub seed: u64,
    /// Initial ground position of the vehicle.
    #[serde(default)]
    pub start_xy: [f64; 2],
    /// Initial height above the terrain under the start point, metres.
    #[serde(default = "default_start_altitude")]
    pub start_altitude_m: f64,
    #[serde(default = "default_camera")]
    pub camera: CameraIntrinsics,
    #[serde(default = "default_baseline")]
    pub stereo_baseline_m: f64,
    #[serde(default = "default_scan")]
    pub scan: ScanPattern,
    #[serde(default = "default_range_noise")]
    pub range_noise_sigma_m: f64,
    #[serde(default = "default_max_range")]
    pub lidar_max_range_m: f64,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_episode_refine")]
    pub refine: RefineOptions,
    #[serde(default)]
    pub thresholds: SafetyThresholds,
    #[serde(default)]
    pub kinematics: Kinematics,
    #[serde(default = "default_camera_hz")]
    pub camera_hz: f64,
    #[serde(default = "default_lidar_hz")]
    pub lidar_hz: f64,
    /// Hard stop on the number of decision frames before the episode is
    /// declared a timeout.
    #[serde(default = "default_frame_budget")]
    pub frame_budget: usize,
    /// Height above the site at which the machine switches to the hover
    /// re-check, metres.
    #[serde(default = "default_confirm_altitude")]
    pub confirm_altitude_m: f64,
    /// Height above ground that counts as touchdown, metres.
    #[serde(default = "default_touchdown_altitude")]
    pub touchdown_altitude_m: f64,
    /// Trailing LiDAR window re-aligned into every new frame, seconds.
    #[serde(default = "default_cloud_window")]
    pub cloud_window_s: f64,
    #[serde(default = "default_wander_cell")]
    pub wander_cell_m: f64,
}

impl EpisodeConfig {
    /// Canonical configuration over the given terrain; everything else at
    /// defaults.
    pub fn over(terrain: TerrainSpec, seed: u64) -> Self {
        Self {
            terrain,
            seed,
            start_xy: [0.0, 0.0],
            start_altitude_m: default_start_altitude(),
            camera: default_camera(),
            stereo_baseline_m: default_baseline(),
            scan: default_scan(),
            range_noise_sigma_m: default_range_noise(),
            lidar_max_range_m: default_max_range(),
            weights: LossWeights::default(),
            refine: default_episode_refine(),
            thresholds: SafetyThresholds::default(),
            kinematics: Kinematics::default(),
            camera_hz: default_camera_hz(),
            lidar_hz: default_lidar_hz(),
            frame_budget: default_frame_budget(),
            confirm_altitude_m: default_confirm_altitude(),
            touchdown_altitude_m: default_touchdown_altitude(),
            cloud_window_s: default_cloud_window(),
            wander_cell_m: default_wander_cell(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |reason: String| Err(HarnessError::BadConfig { reason });
        if !(self.camera_hz > 0.0 && self.lidar_hz > 0.0) {
            return bad(format!(
                "frame rates must be positive, got camera {} Hz, lidar {} Hz",
                self.camera_hz, self.lidar_hz
            ));
        }
        if !(self.stereo_baseline_m > 0.0) {
            return bad(format!("stereo baseline must be positive, got {}", self.stereo_baseline_m));
        }
        if !(self.kinematics.horizontal_speed_mps > 0.0 && self.kinematics.descent_speed_mps > 0.0) {
            return bad("vehicle speeds must be positive".into());
        }
        if self.frame_budget == 0 {
            return bad("frame budget must be at least 1".into());
        }
        if !(self.start_altitude_m > self.confirm_altitude_m
            && self.confirm_altitude_m > self.touchdown_altitude_m
            && self.touchdown_altitude_m > 0.0)
        {
            return bad(format!(
                "altitudes must satisfy start {} > confirm {} > touchdown {} > 0",
                self.start_altitude_m, self.confirm_altitude_m, self.touchdown_altitude_m
            ));
        }
        if !(self.thresholds.deadline_s >= 0.0) {
            return bad("completion deadline must be non-negative".into());
        }
        if !(self.cloud_window_s > 0.0) {
            return bad("cloud window must be positive".into());
        }
        if !(self.wander_cell_m > 0.0) {
            return bad("wander cell must be positive".into());
        }
        if !(self.range_noise_sigma_m >= 0.0 && self.lidar_max_range_m > 0.0) {
            return bad("lidar noise must be non-negative and max range positive".into());
        }
        self.scan.validate()?;
        Ok(())
    }
}

/// Terrain of the kind the pipeline's defaults were tuned on: moderate
/// texture at the scale the photometric term resolves, gentle relief, one
/// generously safe disc near the middle.
pub fn familiar_terrain(seed: u64) -> TerrainSpec {
    TerrainSpec {
        extent: 60.0,
        features: vec![
            TerrainFeature::Plane { height: 0.0, slope_deg: 0.0, slope_azimuth_deg: 0.0 },
            TerrainFeature::Roughness { amplitude: 0.6, octaves: 3, base_wavelength: 7.0 },
            TerrainFeature::FlatDisc { center: [0.0, 0.0], radius: 6.0, height: 0.2 },
        ],
        texture_seed: seed,
        texture_scale: 0.3,
        texture_contrast: 0.3,
    }
}

/// Held-out family with statistics the defaults were not tuned for: texture
/// too coarse to help the photometric check and weaker contrast, so the
/// self-check needs denser LiDAR before it accepts.
pub fn adversarial_terrain(seed: u64) -> TerrainSpec {
    TerrainSpec {
        extent: 60.0,
        features: vec![
            TerrainFeature::Plane { height: 0.0, slope_deg: 0.0, slope_azimuth_deg: 0.0 },
            TerrainFeature::Roughness { amplitude: 0.9, octaves: 4, base_wavelength: 5.0 },
            TerrainFeature::FlatDisc { center: [0.0, 0.0], radius: 6.0, height: 0.2 },
        ],
        texture_seed: seed,
        texture_scale: 4.0,
        texture_contrast: 0.06,
    }
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub(crate) fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    mix_seed(base ^ mix_seed(stream ^ mix_seed(index)))
}
