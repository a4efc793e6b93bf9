//! Flight-log recording and offline sparse-depth dataset export.
//!
//! A flight log is a directory with `poses.csv` (body track), `lidar.csv`
//! (sensor-frame returns), `frames.csv` plus `images/` (timestamped
//! camera frames), and `calib.json` (intrinsics and mounting transforms).
//! Export replays it: for every camera timestamp, the trailing LiDAR window
//! is motion-compensated into that camera and rasterized to a sparse map.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::depth_fusion::{align_points, rasterize_sparse};
use crate::geometry::{CameraIntrinsics, PoseTrack, TimedPose, Transform};
use crate::io::{load_json, save_depth, save_json, save_pgm};
use crate::lidar::{sample_cloud, PointCloud, ScanPattern};
use crate::terrain::{build_terrain, render_frame, TerrainSpec};

use super::episode::nadir_pose;
use super::HarnessError;

/// Sensor mounting and intrinsics stored beside a flight log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogCalibration {
    pub camera: CameraIntrinsics,
    /// Points map from body (IMU) coordinates into the LiDAR frame.
    pub lidar_from_imu: Transform,
    pub camera_from_lidar: Transform,
}

impl LogCalibration {
    pub fn colocated(camera: CameraIntrinsics) -> Self {
        Self {
            camera,
            lidar_from_imu: Transform::identity(),
            camera_from_lidar: Transform::identity(),
        }
    }
}

/// Synthetic straight-line flight over a terrain, for producing logs with
/// known ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightLogSpec {
    pub terrain: TerrainSpec,
    pub seed: u64,
    /// Body position at t = 0.
    pub start: [f64; 3],
    /// Constant body velocity, m/s.
    pub velocity: [f64; 3],
    pub duration_s: f64,
    pub camera_hz: f64,
    pub scan: ScanPattern,
    pub range_noise_sigma_m: f64,
    pub lidar_max_range_m: f64,
    pub calibration: LogCalibration,
}

impl FlightLogSpec {
    /// A slow drift at 10 m over the terrain, 20 Hz camera, co-located
    /// sensors, noiseless ranges.
    pub fn drift(terrain: TerrainSpec, seed: u64) -> Self {
        Self {
            terrain,
            seed,
            start: [0.0, 0.0, 10.0],
            velocity: [0.4, 0.2, 0.0],
            duration_s: 5.0,
            camera_hz: 20.0,
            scan: ScanPattern { points_per_second: 4_000.0, ..ScanPattern::default() },
            range_noise_sigma_m: 0.0,
            lidar_max_range_m: 120.0,
            calibration: LogCalibration::colocated(
                CameraIntrinsics::centred(96.0, 64, 64).expect("valid intrinsics"),
            ),
        }
    }
}

/// One row of `frames.csv`.
#[derive(Debug, Clone, PartialEq)]
struct FrameRow {
    frame_id: u64,
    timestamp: f64,
    image: String,
}

/// Sidecar written next to every exported sparse map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub frame_id: u64,
    pub timestamp: f64,
    /// Image path relative to the log directory.
    pub image: String,
    pub point_count: usize,
    pub density: f64,
    pub window_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub exported: usize,
    /// Frames with no valid LiDAR return in their window.
    pub skipped: usize,
}

fn ingest_err(path: &Path, reason: impl Into<String>) -> HarnessError {
    HarnessError::Ingest { path: path.to_path_buf(), reason: reason.into() }
}

/// Simulates the flight described by `spec` and writes a complete log
/// directory. Returns the number of camera frames recorded.
pub fn record_flight_log(spec: &FlightLogSpec, dir: &Path) -> Result<usize, HarnessError> {
    if !(spec.duration_s > 0.0 && spec.camera_hz > 0.0) {
        return Err(HarnessError::BadConfig {
            reason: "log duration and camera rate must be positive".into(),
        });
    }
    spec.scan.validate()?;
    let terrain = build_terrain(&spec.terrain, spec.seed)?;
    let start = Vector3::from(spec.start);
    let velocity = Vector3::from(spec.velocity);
    let body_at = |t: f64| nadir_pose(start + velocity * t);

    // Body track entries at the camera rate; padding one interval past the
    // end keeps every lidar timestamp inside the track span.
    let dt = 1.0 / spec.camera_hz;
    let n_frames = (spec.duration_s * spec.camera_hz).round() as usize;
    let mut entries = Vec::with_capacity(n_frames + 2);
    let mut t = 0.0;
    while t <= spec.duration_s + dt {
        entries.push(TimedPose { timestamp: t, pose: body_at(t) });
        t += dt;
    }
    let body_track = PoseTrack::from_entries(entries)?;

    let imu_from_lidar = spec.calibration.lidar_from_imu.inverse();
    let lidar_track = PoseTrack::from_entries(
        body_track
            .entries()
            .iter()
            .map(|e| TimedPose { timestamp: e.timestamp, pose: e.pose.compose(&imu_from_lidar) })
            .collect(),
    )?;
    let cloud = sample_cloud(
        &terrain,
        &lidar_track,
        &spec.scan,
        0.0,
        spec.duration_s,
        spec.range_noise_sigma_m,
        spec.lidar_max_range_m,
        spec.seed,
    )?;

    fs::create_dir_all(dir.join("images")).map_err(|e| ingest_err(dir, e.to_string()))?;
    body_track
        .save_csv(&dir.join("poses.csv"))
        .map_err(|e| ingest_err(&dir.join("poses.csv"), e.to_string()))?;
    cloud
        .save_csv(&dir.join("lidar.csv"))
        .map_err(|e| ingest_err(&dir.join("lidar.csv"), e.to_string()))?;
    save_json(&spec.calibration, &dir.join("calib.json"))?;

    let camera_from_imu = spec.calibration.camera_from_lidar.compose(&spec.calibration.lidar_from_imu);
    let imu_from_camera = camera_from_imu.inverse();
    let mut frames_csv = csv::Writer::from_path(dir.join("frames.csv"))
        .map_err(|e| ingest_err(&dir.join("frames.csv"), e.to_string()))?;
    frames_csv
        .write_record(["frame_id", "t", "image"])
        .map_err(|e| ingest_err(&dir.join("frames.csv"), e.to_string()))?;
    for i in 0..n_frames {
        let tf = i as f64 * dt;
        let camera_pose = body_at(tf).compose(&imu_from_camera);
        let frame = render_frame(&terrain, &camera_pose, &spec.calibration.camera)?;
        let name = format!("images/frame_{i:06}.pgm");
        save_pgm(&frame.image, &dir.join(&name))?;
        frames_csv
            .write_record([format!("{i}"), format!("{tf}"), name])
            .map_err(|e| ingest_err(&dir.join("frames.csv"), e.to_string()))?;
    }
    frames_csv.flush().map_err(|e| ingest_err(&dir.join("frames.csv"), e.to_string()))?;
    Ok(n_frames)
}

fn read_poses(path: &Path) -> Result<PoseTrack, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ingest_err(path, e.to_string()))?;
    let mut track = PoseTrack::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| HarnessError::Schema {
            path: path.to_path_buf(),
            row,
            reason: e.to_string(),
        })?;
        if record.len() != 8 {
            return Err(HarnessError::Schema {
                path: path.to_path_buf(),
                row,
                reason: format!("expected 8 fields, got {}", record.len()),
            });
        }
        let mut vals = [0.0f64; 8];
        for (slot, field) in vals.iter_mut().zip(record.iter()) {
            *slot = field.trim().parse().map_err(|_| HarnessError::Schema {
                path: path.to_path_buf(),
                row,
                reason: format!("unparsable number {field:?}"),
            })?;
        }
        let pose =
            Transform::from_wxyz_translation(vals[4], vals[5], vals[6], vals[7], Vector3::new(vals[1], vals[2], vals[3]))
                .map_err(|e| HarnessError::Schema {
                    path: path.to_path_buf(),
                    row,
                    reason: e.to_string(),
                })?;
        track.push(TimedPose { timestamp: vals[0], pose }).map_err(|_| HarnessError::Schema {
            path: path.to_path_buf(),
            row,
            reason: format!("timestamp {} is not increasing", vals[0]),
        })?;
    }
    if track.is_empty() {
        return Err(ingest_err(path, "pose file has no rows"));
    }
    Ok(track)
}

fn read_frames(path: &Path) -> Result<Vec<FrameRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ingest_err(path, e.to_string()))?;
    let mut rows: Vec<FrameRow> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let schema = |reason: String| HarnessError::Schema {
            path: path.to_path_buf(),
            row,
            reason,
        };
        let record = record.map_err(|e| schema(e.to_string()))?;
        if record.len() != 3 {
            return Err(schema(format!("expected 3 fields, got {}", record.len())));
        }
        let frame_id =
            record[0].trim().parse().map_err(|_| schema(format!("bad frame id {:?}", &record[0])))?;
        let timestamp: f64 =
            record[1].trim().parse().map_err(|_| schema(format!("bad timestamp {:?}", &record[1])))?;
        if let Some(prev) = rows.last() {
            if timestamp <= prev.timestamp {
                return Err(schema(format!(
                    "timestamp {timestamp} does not increase past {}",
                    prev.timestamp
                )));
            }
        }
        rows.push(FrameRow { frame_id, timestamp, image: record[2].to_string() });
    }
    Ok(rows)
}

fn read_cloud(path: &Path) -> Result<PointCloud, HarnessError> {
    let cloud = PointCloud::load_csv(path).map_err(|e| ingest_err(path, e.to_string()))?;
    for (i, pair) in cloud.points.windows(2).enumerate() {
        if pair[1].timestamp < pair[0].timestamp {
            return Err(HarnessError::Schema {
                path: path.to_path_buf(),
                row: i + 3,
                reason: format!(
                    "timestamp {} decreases below {}",
                    pair[1].timestamp, pair[0].timestamp
                ),
            });
        }
    }
    Ok(cloud)
}

/// Replays a flight log into per-frame sparse depth maps.
///
/// Each camera frame gets the LiDAR window `[t - window_s, t]` aligned into
/// its camera and rasterized; frames whose window holds no usable return are
/// skipped and counted. Outputs land in `out/sparse/` and `out/sidecar/`
/// with an `export_summary.json`.
pub fn export_depth_dataset(
    log: &Path,
    out: &Path,
    window_s: f64,
) -> Result<ExportSummary, HarnessError> {
    if !(window_s > 0.0) {
        return Err(HarnessError::BadConfig {
            reason: format!("window must be positive, got {window_s}"),
        });
    }
    let calib: LogCalibration = load_json(&log.join("calib.json"))?;
    let poses = read_poses(&log.join("poses.csv"))?;
    let cloud = read_cloud(&log.join("lidar.csv"))?;
    let frames = read_frames(&log.join("frames.csv"))?;

    let sparse_dir = out.join("sparse");
    let sidecar_dir = out.join("sidecar");
    fs::create_dir_all(&sparse_dir).map_err(|e| ingest_err(&sparse_dir, e.to_string()))?;
    fs::create_dir_all(&sidecar_dir).map_err(|e| ingest_err(&sidecar_dir, e.to_string()))?;

    let times: Vec<f64> = cloud.points.iter().map(|p| p.timestamp).collect();
    let mut exported = 0usize;
    let mut skipped = 0usize;
    for frame in &frames {
        let image_path = log.join(&frame.image);
        if !image_path.exists() {
            return Err(ingest_err(&image_path, "image referenced by frames.csv is missing"));
        }
        let t = frame.timestamp;
        let lo = times.partition_point(|&pt| pt < t - window_s);
        let hi = times.partition_point(|&pt| pt <= t);
        let window = PointCloud { points: cloud.points[lo..hi].to_vec() };
        let aligned = align_points(
            &window,
            &poses,
            &calib.lidar_from_imu,
            &calib.camera_from_lidar,
            t,
        )?;
        let sparse = rasterize_sparse(&aligned, &calib.camera, t);
        if sparse.valid_count() == 0 {
            skipped += 1;
            continue;
        }
        let stem = format!("frame_{:06}", frame.frame_id);
        save_depth(sparse.depth(), &sparse_dir.join(format!("{stem}.pf8")))?;
        save_json(
            &FrameSidecar {
                frame_id: frame.frame_id,
                timestamp: t,
                image: frame.image.clone(),
                point_count: window.points.len(),
                density: sparse.density(),
                window_s,
            },
            &sidecar_dir.join(format!("{stem}.json")),
        )?;
        exported += 1;
    }
    let summary = ExportSummary { exported, skipped };
    save_json(&summary, &out.join("export_summary.json"))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::load_depth;
    use crate::terrain::TerrainFeature;

    fn small_spec(seed: u64) -> FlightLogSpec {
        let mut spec = FlightLogSpec::drift(TerrainSpec::flat(60.0), seed);
        spec.duration_s = 0.6;
        spec.calibration =
            LogCalibration::colocated(CameraIntrinsics::centred(48.0, 32, 32).unwrap());
        spec.scan.points_per_second = 3_000.0;
        spec
    }

    #[test]
    fn flat_log_exports_exact_depth() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log");
        let out = dir.path().join("out");
        let n = record_flight_log(&small_spec(4), &log).unwrap();
        assert_eq!(n, 12);
        let summary = export_depth_dataset(&log, &out, 0.4).unwrap();
        // The first frame sits at t = 0 with no LiDAR history behind it.
        assert_eq!(summary, ExportSummary { exported: 11, skipped: 1 });

        // Over flat ground the plane depth of every return equals the
        // flight altitude, so with zero noise the export is exact.
        for id in 1..n {
            let map = load_depth(&out.join(format!("sparse/frame_{id:06}.pf8"))).unwrap();
            assert!(map.known_count() > 50, "frame {id} too sparse");
            for (_, _, d) in map.iter_known() {
                assert!((d - 10.0).abs() < 1e-9, "frame {id} depth {d}");
            }
        }
        let sidecar: FrameSidecar = load_json(&out.join("sidecar/frame_000003.json")).unwrap();
        assert_eq!(sidecar.frame_id, 3);
        assert!(sidecar.density > 0.0);
    }

    #[test]
    fn export_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log");
        record_flight_log(&small_spec(9), &log).unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        export_depth_dataset(&log, &out_a, 0.4).unwrap();
        export_depth_dataset(&log, &out_b, 0.4).unwrap();
        for id in 1..12 {
            let name = format!("sparse/frame_{id:06}.pf8");
            let a = std::fs::read(out_a.join(&name)).unwrap();
            let b = std::fs::read(out_b.join(&name)).unwrap();
            assert_eq!(a, b, "frame {id} differs between runs");
        }
    }

    #[test]
    fn empty_lidar_skips_every_frame() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log");
        let n = record_flight_log(&small_spec(5), &log).unwrap();
        std::fs::write(log.join("lidar.csv"), "t,x,y,z,intensity\n").unwrap();
        let summary = export_depth_dataset(&log, &dir.path().join("out"), 0.4).unwrap();
        assert_eq!(summary, ExportSummary { exported: 0, skipped: n });
    }

    #[test]
    fn decreasing_pose_timestamp_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log");
        record_flight_log(&small_spec(6), &log).unwrap();
        let poses = std::fs::read_to_string(log.join("poses.csv")).unwrap();
        let mut lines: Vec<&str> = poses.lines().collect();
        lines.swap(2, 3);
        std::fs::write(log.join("poses.csv"), lines.join("\n")).unwrap();
        let err = export_depth_dataset(&log, &dir.path().join("out"), 0.4).unwrap_err();
        let msg = err.to_string();
        // Swapping data lines 2 and 3 puts the out-of-order timestamp on
        // file row 4 (row 1 is the header).
        assert!(msg.contains("row 4"), "error should name the row: {msg}");
        assert!(msg.contains("poses.csv"), "error should name the file: {msg}");
    }

    #[test]
    fn missing_lidar_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log");
        record_flight_log(&small_spec(7), &log).unwrap();
        std::fs::remove_file(log.join("lidar.csv")).unwrap();
        let err = export_depth_dataset(&log, &dir.path().join("out"), 0.4).unwrap_err();
        assert!(err.to_string().contains("lidar.csv"), "{err}");
    }

    #[test]
    fn offset_camera_mounting_still_exports_consistent_depth() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log");
        let mut spec = small_spec(8);
        // Camera 5 cm to the side of the LiDAR, LiDAR 2 cm off the body.
        spec.calibration.lidar_from_imu =
            Transform::from_translation(Vector3::new(0.02, 0.0, 0.0));
        spec.calibration.camera_from_lidar =
            Transform::from_translation(Vector3::new(-0.05, 0.01, 0.0));
        record_flight_log(&spec, &log).unwrap();
        let out = dir.path().join("out");
        let summary = export_depth_dataset(&log, &out, 0.4).unwrap();
        assert_eq!(summary.skipped, 1);
        let map = load_depth(&out.join("sparse/frame_000005.pf8")).unwrap();
        for (_, _, d) in map.iter_known() {
            assert!((d - 10.0).abs() < 1e-9, "depth {d}");
        }
    }
}
