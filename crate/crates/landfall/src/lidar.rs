//! Non-repetitive rosette scan simulation.
//!
//! The scanner sweeps a rose-curve pattern inside a circular field of view
//! centred on the sensor +z axis: the off-axis angle oscillates as
//! `theta(t) = fov_half * |sin(2 pi a t)|` while the azimuth advances as
//! `phi(t) = 2 pi b t`. With incommensurate petal rates the pattern never
//! repeats, so angular coverage keeps growing with integration time.
//! Point clouds are produced by ray-casting each direction against a
//! [`Terrain`] from an interpolated sensor pose.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, PoseTrack};
use crate::terrain::Terrain;

/// Largest denominator checked when rejecting near-rational petal-rate
/// ratios, and the relative gap a ratio must keep from every such fraction.
const RATIO_MAX_DENOMINATOR: u64 = 8;
const RATIO_MIN_GAP: f64 = 2e-3;

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("invalid scan pattern: {reason}")]
    BadPattern { reason: String },
    #[error("empty scan interval: t0 = {t0}, t1 = {t1}")]
    EmptyInterval { t0: f64, t1: f64 },
    #[error("max_range must be positive, got {0}")]
    BadMaxRange(f64),
    #[error("sensor track does not span the scan interval")]
    TrackGap(#[from] GeometryError),
    #[error("malformed cloud csv: {reason}")]
    BadCsv { reason: String },
}

/// Rosette scan parameters.
///
/// Defaults are frozen from a coverage calibration: they fill at least 99%
/// of a 32x32 angular grid within 2 s while never repeating (the rate ratio
/// stays clear of small fractions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPattern {
    /// Half-angle of the circular field of view, degrees.
    pub fov_half_angle_deg: f64,
    /// Petal oscillation rate, Hz.
    pub petal_rate_a: f64,
    /// Azimuth rotation rate, Hz.
    pub petal_rate_b: f64,
    pub points_per_second: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self {
            fov_half_angle_deg: 19.2,
            petal_rate_a: 31.3,
            petal_rate_b: 9.7,
            points_per_second: 100_000.0,
        }
    }
}

impl ScanPattern {
    pub fn validate(&self) -> Result<(), LidarError> {
        if !(self.fov_half_angle_deg > 0.0 && self.fov_half_angle_deg < 90.0) {
            return Err(LidarError::BadPattern {
                reason: format!("fov_half_angle_deg must be in (0, 90), got {}", self.fov_half_angle_deg),
            });
        }
        if !(self.petal_rate_a > 0.0 && self.petal_rate_b > 0.0) {
            return Err(LidarError::BadPattern {
                reason: "petal rates must be positive".into(),
            });
        }
        if !(self.points_per_second > 0.0) {
            return Err(LidarError::BadPattern {
                reason: "points_per_second must be positive".into(),
            });
        }
        let ratio = (self.petal_rate_a / self.petal_rate_b).max(self.petal_rate_b / self.petal_rate_a);
        for q in 1..=RATIO_MAX_DENOMINATOR {
            let p = (ratio * q as f64).round();
            if p >= 1.0 && (ratio - p / q as f64).abs() < RATIO_MIN_GAP {
                return Err(LidarError::BadPattern {
                    reason: format!(
                        "petal rate ratio {ratio:.5} is within {RATIO_MIN_GAP} of {p}/{q}; the pattern would repeat"
                    ),
                });
            }
        }
        Ok(())
    }

    fn direction_at(&self, t: f64) -> Vector3<f64> {
        let fov_half = self.fov_half_angle_deg.to_radians();
        let theta = fov_half * (std::f64::consts::TAU * self.petal_rate_a * t).sin().abs();
        let phi = std::f64::consts::TAU * self.petal_rate_b * t;
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }
}

/// One LiDAR return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    /// Lambertian cosine of incidence, in `[0, 1]`.
    pub intensity: f64,
}

/// Time-ordered LiDAR returns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Writes `t,x,y,z,intensity` rows with a header, full f64 precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x", "y", "z", "intensity"])?;
        for p in &self.points {
            w.write_record(
                [p.timestamp, p.position.x, p.position.y, p.position.z, p.intensity]
                    .iter()
                    .map(|v| format!("{v}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file).map_err(std::io::Error::other)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, LidarError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut points = Vec::new();
        for record in r.records() {
            let record = record.map_err(|e| LidarError::BadCsv { reason: e.to_string() })?;
            if record.len() != 5 {
                return Err(LidarError::BadCsv {
                    reason: format!("expected 5 fields, got {}", record.len()),
                });
            }
            let mut vals = [0.0f64; 5];
            for (slot, field) in vals.iter_mut().zip(record.iter()) {
                *slot = field.trim().parse().map_err(|_| LidarError::BadCsv {
                    reason: format!("bad float {field:?}"),
                })?;
            }
            points.push(LidarPoint {
                timestamp: vals[0],
                position: Vector3::new(vals[1], vals[2], vals[3]),
                intensity: vals[4],
            });
        }
        Ok(Self { points })
    }

    pub fn load_csv(path: &Path) -> Result<Self, LidarError> {
        let file = std::fs::File::open(path).map_err(|e| LidarError::BadCsv { reason: e.to_string() })?;
        Self::read_csv(file)
    }
}

/// Angular coverage of the field of view after integrating for a while.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub integration_time: f64,
    /// Fraction of in-FOV grid cells hit by at least one scan direction.
    pub covered_fraction: f64,
    /// Bins per axis of the occupancy grid the fraction was measured on.
    pub grid: usize,
}

/// Scan directions emitted during `[t0, t1)`, one per emission slot at the
/// pattern's point rate, each paired with its emission time.
pub fn scan_directions(
    pattern: &ScanPattern,
    t0: f64,
    t1: f64,
) -> Result<Vec<(f64, Vector3<f64>)>, LidarError> {
    pattern.validate()?;
    if !(t1 > t0) {
        return Err(LidarError::EmptyInterval { t0, t1 });
    }
    let count = (pattern.points_per_second * (t1 - t0)).round() as usize;
    let dt = (t1 - t0) / count.max(1) as f64;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let t = t0 + (k as f64 + 0.5) * dt;
        out.push((t, pattern.direction_at(t)));
    }
    Ok(out)
}

/// Measures how much of the FOV disc the pattern has visited by `integration_time`.
///
/// Directions are mapped to the unit disc as `(sin theta / sin fov_half)`
/// times the azimuth direction, then binned on a `grid x grid` occupancy
/// grid over `[-1, 1]^2`; only cells whose centre lies inside the unit disc
/// count toward the denominator.
pub fn coverage(pattern: &ScanPattern, integration_time: f64, grid: usize) -> Result<CoverageReport, LidarError> {
    if !(integration_time > 0.0) {
        return Err(LidarError::EmptyInterval { t0: 0.0, t1: integration_time });
    }
    let dirs = scan_directions(pattern, 0.0, integration_time)?;
    let sin_fov = pattern.fov_half_angle_deg.to_radians().sin();
    let mut hit = vec![false; grid * grid];
    for (_, d) in &dirs {
        let u = d.x / sin_fov;
        let v = d.y / sin_fov;
        let col = (((u + 1.0) / 2.0) * grid as f64).floor() as isize;
        let row = (((v + 1.0) / 2.0) * grid as f64).floor() as isize;
        if row >= 0 && col >= 0 && (row as usize) < grid && (col as usize) < grid {
            hit[row as usize * grid + col as usize] = true;
        }
    }
    let mut covered = 0usize;
    let mut in_disc = 0usize;
    for row in 0..grid {
        for col in 0..grid {
            let cu = (col as f64 + 0.5) / grid as f64 * 2.0 - 1.0;
            let cv = (row as f64 + 0.5) / grid as f64 * 2.0 - 1.0;
            if cu * cu + cv * cv <= 1.0 {
                in_disc += 1;
                if hit[row * grid + col] {
                    covered += 1;
                }
            }
        }
    }
    Ok(CoverageReport {
        integration_time,
        covered_fraction: covered as f64 / in_disc.max(1) as f64,
        grid,
    })
}

/// Ray-casts every scan direction in `[t0, t1)` against the terrain from the
/// interpolated sensor pose, recording hits in the sensor frame with
/// additive Gaussian range noise. Misses and out-of-range returns are
/// dropped. Deterministic per seed.
#[allow(clippy::too_many_arguments)]
pub fn sample_cloud(
    terrain: &Terrain,
    sensor_track: &PoseTrack,
    pattern: &ScanPattern,
    t0: f64,
    t1: f64,
    noise_sigma: f64,
    max_range: f64,
    seed: u64,
) -> Result<PointCloud, LidarError> {
    if !(max_range > 0.0) {
        return Err(LidarError::BadMaxRange(max_range));
    }
    let dirs = scan_directions(pattern, t0, t1)?;
    if let Some((first, _)) = dirs.first() {
        // Fail fast with a span error before casting anything.
        sensor_track.sample(*first)?;
        sensor_track.sample(dirs.last().expect("non-empty").0)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|_| LidarError::BadPattern {
        reason: format!("noise_sigma must be finite and non-negative, got {noise_sigma}"),
    })?;
    let mut points = Vec::new();
    for (t, dir_sensor) in dirs {
        let pose = sensor_track.sample(t)?;
        let origin = pose.translation();
        let dir_world = pose.apply_direction(&dir_sensor);
        let Some(hit) = terrain.raycast(&origin, &dir_world, max_range) else {
            continue;
        };
        let range = hit.range + noise.sample(&mut rng);
        if range <= 0.0 {
            continue;
        }
        let normal = terrain.normal_at(hit.point.x, hit.point.y);
        let intensity = normal.dot(&-dir_world).clamp(0.0, 1.0);
        points.push(LidarPoint {
            timestamp: t,
            position: dir_sensor * range,
            intensity,
        });
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{TimedPose, Transform};
    use crate::terrain::{build_terrain, TerrainSpec};
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn downward_track(altitude: f64, t_end: f64) -> PoseTrack {
        let pose = Transform::new(
            UnitQuaternion::from_scaled_axis(Vector3::x() * std::f64::consts::PI),
            Vector3::new(0.0, 0.0, altitude),
        );
        PoseTrack::from_entries(vec![
            TimedPose { timestamp: 0.0, pose },
            TimedPose { timestamp: t_end, pose },
        ])
        .unwrap()
    }

    #[test]
    fn default_pattern_is_valid_and_small_ratios_are_rejected() {
        ScanPattern::default().validate().unwrap();
        let repeating = ScanPattern {
            petal_rate_a: 30.0,
            petal_rate_b: 10.0,
            ..ScanPattern::default()
        };
        assert!(matches!(repeating.validate(), Err(LidarError::BadPattern { .. })));
    }

    #[test]
    fn direction_count_and_cone_bound() {
        let pattern = ScanPattern::default();
        let dirs = scan_directions(&pattern, 0.0, 0.1).unwrap();
        assert_eq!(dirs.len(), 10_000);
        let fov = pattern.fov_half_angle_deg.to_radians();
        for (t, d) in &dirs {
            assert!((0.0..0.1).contains(t));
            assert_relative_eq!(d.norm(), 1.0, epsilon = 1e-12);
            assert!(d.z.acos() <= fov + 1e-12);
        }
        assert_eq!(dirs, scan_directions(&pattern, 0.0, 0.1).unwrap());
    }

    #[test]
    fn empty_interval_is_an_error() {
        let pattern = ScanPattern::default();
        assert!(matches!(
            scan_directions(&pattern, 1.0, 1.0),
            Err(LidarError::EmptyInterval { .. })
        ));
        assert!(matches!(
            scan_directions(&pattern, 1.0, 0.5),
            Err(LidarError::EmptyInterval { .. })
        ));
    }

    #[test]
    fn no_angular_bin_hoards_points() {
        let pattern = ScanPattern::default();
        let dirs = scan_directions(&pattern, 0.0, 2.0).unwrap();
        let sin_fov = pattern.fov_half_angle_deg.to_radians().sin();
        let grid = 64usize;
        let mut counts = vec![0usize; grid * grid];
        for (_, d) in &dirs {
            let col = ((d.x / sin_fov + 1.0) / 2.0 * grid as f64).floor() as usize;
            let row = ((d.y / sin_fov + 1.0) / 2.0 * grid as f64).floor() as usize;
            counts[row.min(grid - 1) * grid + col.min(grid - 1)] += 1;
        }
        let max = *counts.iter().max().unwrap();
        assert!(
            (max as f64) < 0.05 * dirs.len() as f64,
            "largest bin holds {max} of {} points",
            dirs.len()
        );
    }

    #[test]
    fn coverage_grows_and_saturates() {
        let pattern = ScanPattern::default();
        let c01 = coverage(&pattern, 0.1, 32).unwrap().covered_fraction;
        let c05 = coverage(&pattern, 0.5, 32).unwrap().covered_fraction;
        let c10 = coverage(&pattern, 1.0, 32).unwrap().covered_fraction;
        let c20 = coverage(&pattern, 2.0, 32).unwrap().covered_fraction;
        assert!(c01 < c05 && c05 < c10, "coverage not strictly increasing: {c01} {c05} {c10}");
        assert!(c10 <= c20);
        assert!(c20 >= 0.99, "coverage at 2 s is only {c20}");
    }

    #[test]
    fn stationary_downward_scan_ranges_match_plane_intersection() {
        let terrain = build_terrain(&TerrainSpec::flat(40.0), 1).unwrap();
        let track = downward_track(10.0, 0.05);
        let pattern = ScanPattern::default();
        let cloud = sample_cloud(&terrain, &track, &pattern, 0.0, 0.01, 0.0, 100.0, 7).unwrap();
        assert!(!cloud.is_empty());
        for p in &cloud.points {
            let range = p.position.norm();
            let cos_theta = p.position.z / range;
            assert_relative_eq!(range, 10.0 / cos_theta, epsilon = 1e-6);
        }
    }

    #[test]
    fn short_max_range_gives_empty_cloud() {
        let terrain = build_terrain(&TerrainSpec::flat(40.0), 1).unwrap();
        let track = downward_track(10.0, 0.05);
        let cloud = sample_cloud(&terrain, &track, &ScanPattern::default(), 0.0, 0.01, 0.0, 5.0, 7).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn range_noise_has_requested_spread() {
        let terrain = build_terrain(&TerrainSpec::flat(40.0), 1).unwrap();
        let track = downward_track(10.0, 0.3);
        let cloud = sample_cloud(&terrain, &track, &ScanPattern::default(), 0.0, 0.15, 0.02, 100.0, 9).unwrap();
        assert!(cloud.len() >= 10_000);
        let errors: Vec<f64> = cloud
            .points
            .iter()
            .map(|p| {
                let range = p.position.norm();
                let cos_theta = p.position.z / range;
                range - 10.0 / cos_theta
            })
            .collect();
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let sd = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / errors.len() as f64).sqrt();
        assert!((0.018..=0.022).contains(&sd), "sample sd {sd}");
    }

    #[test]
    fn identical_seeds_give_bit_identical_clouds() {
        let terrain = build_terrain(
            &TerrainSpec {
                features: vec![
                    crate::terrain::TerrainFeature::Plane { height: 0.0, slope_deg: 3.0, slope_azimuth_deg: 10.0 },
                    crate::terrain::TerrainFeature::Roughness { amplitude: 0.2, octaves: 3, base_wavelength: 1.0 },
                ],
                ..TerrainSpec::flat(40.0)
            },
            5,
        )
        .unwrap();
        let track = downward_track(12.0, 0.1);
        let a = sample_cloud(&terrain, &track, &ScanPattern::default(), 0.0, 0.05, 0.01, 100.0, 3).unwrap();
        let b = sample_cloud(&terrain, &track, &ScanPattern::default(), 0.0, 0.05, 0.01, 100.0, 3).unwrap();
        assert_eq!(a, b);
        let c = sample_cloud(&terrain, &track, &ScanPattern::default(), 0.0, 0.05, 0.01, 100.0, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn world_reprojected_points_lie_on_terrain() {
        let terrain = build_terrain(
            &TerrainSpec {
                features: vec![
                    crate::terrain::TerrainFeature::Plane { height: 1.0, slope_deg: 6.0, slope_azimuth_deg: 45.0 },
                    crate::terrain::TerrainFeature::Roughness { amplitude: 0.3, octaves: 3, base_wavelength: 2.0 },
                ],
                ..TerrainSpec::flat(40.0)
            },
            11,
        )
        .unwrap();
        let track = downward_track(12.0, 0.2);
        let sigma = 0.01;
        let cloud = sample_cloud(&terrain, &track, &ScanPattern::default(), 0.0, 0.1, sigma, 100.0, 13).unwrap();
        let pose = track.sample(0.05).unwrap();
        let mut off_surface = 0usize;
        for p in &cloud.points {
            let world = pose.apply(&p.position);
            let dz = (world.z - terrain.height_at(world.x, world.y)).abs();
            if dz > 3.0 * sigma + 1e-6 {
                off_surface += 1;
            }
        }
        assert!(
            (off_surface as f64) < 0.003 * cloud.len() as f64,
            "{off_surface} of {} points off surface",
            cloud.len()
        );
    }

    #[test]
    fn track_must_span_scan_interval() {
        let terrain = build_terrain(&TerrainSpec::flat(40.0), 1).unwrap();
        let track = downward_track(10.0, 0.05);
        assert!(matches!(
            sample_cloud(&terrain, &track, &ScanPattern::default(), 0.0, 0.2, 0.0, 100.0, 1),
            Err(LidarError::TrackGap(_))
        ));
    }

    #[test]
    fn cloud_csv_roundtrip_is_exact() {
        let terrain = build_terrain(&TerrainSpec::flat(40.0), 1).unwrap();
        let track = downward_track(10.0, 0.05);
        let cloud = sample_cloud(&terrain, &track, &ScanPattern::default(), 0.0, 0.005, 0.01, 100.0, 2).unwrap();
        let mut buf = Vec::new();
        cloud.write_csv(&mut buf).unwrap();
        let back = PointCloud::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, cloud);
    }
}
