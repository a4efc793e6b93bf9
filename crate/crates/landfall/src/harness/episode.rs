//! The closed control loop: sensors, completion, site selection, vehicle.

use std::cell::{Cell, RefCell};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::depth_fusion::{align_points, AccumulationBuffer};
use crate::geometry::{PoseTrack, TimedPose, Transform};
use crate::image_quality::evaluate_prediction;
use crate::landing::{
    correct_attitude, largest_inscribed_circle, make_candidate, safety_mask, step_state_machine,
    to_plane_depth, CandidateTracker, Command, LandingCandidate, LandingEvent, LandingState,
    TrackerDecision, WanderPlan,
};
use crate::lidar::{sample_cloud, LidarPoint, PointCloud};
use crate::predictor::{
    compute_metrics, dynamic_completion, CameraFrame, DepthMetrics, DynamicConfig, SensorEvent,
};
use crate::terrain::{build_terrain, render_frame, safety_oracle, SafetyOracle, Terrain};

use super::metrics::FrameRecord;
use super::{derive_seed, EpisodeConfig, HarnessError};

/// How an episode ended, as judged by the terrain's own safety oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    LandedSafe,
    LandedUnsafe,
    /// The wander plan ran out of ground to search.
    Aborted,
    /// The frame budget expired first.
    Timeout,
}

/// One decision frame of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLogEntry {
    /// Time at the start of the frame, seconds.
    pub t: f64,
    pub position: [f64; 3],
    /// Machine state at the end of the frame.
    pub state: LandingState,
    pub accumulation_s: f64,
    /// Self-check verdict; `None` on coasting frames with no completion.
    pub accepted: Option<bool>,
    pub sparse_density: f64,
    pub candidate: Option<LandingCandidate>,
    /// Accuracy against the rendered ground truth of this frame.
    pub metrics: Option<DepthMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub outcome: EpisodeOutcome,
    pub touchdown: Option<[f64; 3]>,
    /// Ring-search distance from the touchdown point to oracle-safe ground,
    /// `None` when the episode never touched down or nothing safe lies
    /// within 20 m.
    pub distance_to_safe_m: Option<f64>,
    pub mean_accumulation_s: f64,
    pub max_accumulation_s: f64,
    pub frames: Vec<FrameLogEntry>,
    /// `(t, x, y, z)` at every frame start, plus the touchdown point.
    pub trajectory: Vec<[f64; 4]>,
}

impl EpisodeReport {
    /// Per-frame records suitable for density-bucket aggregation.
    pub fn records(&self) -> Vec<FrameRecord> {
        self.frames
            .iter()
            .filter_map(|f| {
                f.metrics.map(|metrics| FrameRecord { density: f.sparse_density, metrics })
            })
            .collect()
    }
}

/// Camera-to-world pose of a nadir-mounted camera at `position`: optical
/// axis straight down, image x along world x.
pub fn nadir_pose(position: Vector3<f64>) -> Transform {
    let down = UnitQuaternion::from_scaled_axis(Vector3::x() * std::f64::consts::PI);
    Transform::new(down, position)
}

fn ground_under(terrain: &Terrain, x: f64, y: f64) -> f64 {
    if terrain.in_domain(x, y) {
        terrain.height_at(x, y)
    } else {
        0.0
    }
}

/// First oracle-safe point on rings of growing radius around `from`.
fn distance_to_nearest_safe(
    oracle: &SafetyOracle<'_>,
    from: (f64, f64),
    max_radius: f64,
) -> Option<f64> {
    if oracle.is_safe(from.0, from.1) {
        return Some(0.0);
    }
    let step = 0.5;
    let mut radius = step;
    while radius <= max_radius {
        let n = ((std::f64::consts::TAU * radius / step).ceil() as usize).max(8);
        for i in 0..n {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            if oracle.is_safe(from.0 + radius * a.cos(), from.1 + radius * a.sin()) {
                return Some(radius);
            }
        }
        radius += step;
    }
    None
}

/// Runs one seeded closed-loop episode to touchdown, wander exhaustion, or
/// the frame budget. Deterministic: the same config produces an identical
/// report.
pub fn run_episode(config: &EpisodeConfig) -> Result<EpisodeReport, HarnessError> {
    config.validate()?;
    let terrain = build_terrain(&config.terrain, config.seed)?;
    let thr = config.thresholds;
    let oracle = safety_oracle(&terrain, thr.t_inc_deg, thr.t_tur_deg, thr.min_radius_m);
    let k = config.camera;
    let camera_dt = 1.0 / config.camera_hz;
    let packet_dt = 1.0 / config.lidar_hz;
    let kin = config.kinematics;

    let [x0, y0] = config.start_xy;
    let mut pos = Vector3::new(x0, y0, ground_under(&terrain, x0, y0) + config.start_altitude_m);
    let mut vel = Vector3::zeros();
    let mut cmd_target: Option<(f64, f64)> = None;
    let mut t = 0.0f64;

    let mut state = LandingState::SelectSite;
    let mut tracker = CandidateTracker::new(0.0);
    let wander_margin = 5.0f64.min(terrain.extent() / 4.0);
    let mut wander = WanderPlan::new(
        (terrain.extent() / 2.0 - wander_margin).max(config.wander_cell_m),
        config.wander_cell_m,
        derive_seed(config.seed, 0x57, 0),
    )?;
    let mut wander_target = (x0, y0);
    let mut committed: Option<LandingCandidate> = None;

    let mut flight_track = PoseTrack::new();
    let mut window: Vec<LidarPoint> = Vec::new();
    let mut frames: Vec<FrameLogEntry> = Vec::new();
    let mut trajectory: Vec<[f64; 4]> = Vec::new();
    let mut acc_times: Vec<f64> = Vec::new();
    let mut outcome = EpisodeOutcome::Timeout;
    let mut touchdown: Option<[f64; 3]> = None;

    let right_in_left = Transform::from_translation(Vector3::new(config.stereo_baseline_m, 0.0, 0.0));
    let right_from_left = right_in_left.inverse();

    'epochs: for epoch in 0..config.frame_budget {
        trajectory.push([t, pos.x, pos.y, pos.z]);
        let pose = nadir_pose(pos);
        flight_track.push(TimedPose { timestamp: t, pose })?;

        if state == LandingState::FinalDescend {
            // Committed: straight down, no perception.
            pos.z -= kin.descent_speed_mps * camera_dt;
            t += camera_dt;
            let agl = pos.z - ground_under(&terrain, pos.x, pos.y);
            if agl <= config.touchdown_altitude_m {
                let (landed, _) = step_state_machine(state, LandingEvent::Touchdown)?;
                state = landed;
                outcome = if oracle.is_safe(pos.x, pos.y) {
                    EpisodeOutcome::LandedSafe
                } else {
                    EpisodeOutcome::LandedUnsafe
                };
                touchdown = Some([pos.x, pos.y, pos.z]);
                trajectory.push([t, pos.x, pos.y, pos.z]);
            }
            frames.push(FrameLogEntry {
                t,
                position: [pos.x, pos.y, pos.z],
                state,
                accumulation_s: 0.0,
                accepted: None,
                sparse_density: 0.0,
                candidate: None,
                metrics: None,
            });
            if touchdown.is_some() {
                break 'epochs;
            }
            continue 'epochs;
        }

        // Sensor simulation for this frame: a stereo render at the frame
        // time and LiDAR packets along the lookahead track, all motion
        // compensated into the left camera.
        let left = render_frame(&terrain, &pose, &k)?;
        let right_pose = pose.compose(&right_in_left);
        let right = render_frame(&terrain, &right_pose, &k)?;

        let horizon = thr.deadline_s + packet_dt;
        // Long enough for the completion horizon and for topping the frame
        // up to a whole number of packets, whichever runs later.
        let span = thr.deadline_s.max(camera_dt) + 2.0 * packet_dt;
        let ahead = PoseTrack::from_entries(vec![
            TimedPose { timestamp: t, pose },
            TimedPose { timestamp: t + span, pose: nadir_pose(pos + vel * span) },
        ])?;
        let identity = Transform::identity();
        let sample_packet = |j: usize| {
            let t0 = t + j as f64 * packet_dt;
            sample_cloud(
                &terrain,
                &ahead,
                &config.scan,
                t0,
                t0 + packet_dt,
                config.range_noise_sigma_m,
                config.lidar_max_range_m,
                derive_seed(config.seed, epoch as u64, j as u64),
            )
        };

        // Packets are ray cast on demand as the completion pulls them, so
        // a frame that accepts early pays for no more scanning than it used.
        let fresh: RefCell<Vec<LidarPoint>> = RefCell::new(Vec::new());
        let packet_err: RefCell<Option<HarnessError>> = RefCell::new(None);
        let packets_made = Cell::new(0usize);
        let n_packets = (horizon / packet_dt).ceil() as usize;
        let packet_events = (0..n_packets).map(|j| {
            let made = sample_packet(j).map_err(HarnessError::from).and_then(|cloud| {
                let aligned = align_points(&cloud, &ahead, &identity, &identity, t)
                    .map_err(HarnessError::from)?;
                fresh.borrow_mut().extend(cloud.points);
                packets_made.set(j + 1);
                Ok(SensorEvent::Lidar {
                    points: aligned,
                    until: t + (j + 1) as f64 * packet_dt,
                })
            });
            match made {
                Ok(event) => Some(event),
                Err(e) => {
                    *packet_err.borrow_mut() = Some(e);
                    None
                }
            }
        });
        let camera_event = SensorEvent::Camera(CameraFrame {
            timestamp: t,
            image: left.image.clone(),
            world_from_camera: pose,
        });
        let mut events =
            std::iter::once(Some(camera_event)).chain(packet_events).map_while(|e| e);

        let mut buffer = AccumulationBuffer::new(t);
        window.retain(|p| p.timestamp >= t - config.cloud_window_s);
        if !window.is_empty() {
            let carry = PointCloud { points: window.clone() };
            buffer.extend(align_points(&carry, &flight_track, &identity, &identity, t)?);
        }

        let dcfg = DynamicConfig {
            deadline: thr.deadline_s,
            weights: config.weights,
            refine: config.refine,
            altitude_prior: pos.z,
            fov: None,
            neighbor_views: vec![(right.image.clone(), right_pose)],
        };
        let mut evaluator = |frame: &CameraFrame, pred: &crate::grid::DepthMap, sparse: &crate::depth_fusion::SparseDepth| {
            evaluate_prediction(&frame.image, &right.image, pred, sparse, &right_from_left, &k)
        };
        let out = dynamic_completion(&mut events, &mut buffer, &mut evaluator, &dcfg, &k)?;
        drop(events);
        if let Some(e) = packet_err.into_inner() {
            return Err(e);
        }
        acc_times.push(out.accumulation_time);

        let plane = to_plane_depth(&out.depth, &k);
        let corrected = correct_attitude(&plane, 0.0, 0.0, &k)?;
        let mask = safety_mask(&corrected, &k, thr.t_inc_deg, thr.t_tur_deg, 2)?;
        let lic = largest_inscribed_circle(&mask.refined);
        let candidate = lic.and_then(|(center, radius)| {
            make_candidate(center, radius, &corrected, &k, &pose, thr.min_radius_m).ok().flatten()
        });

        let metrics = compute_metrics(&out.depth, &left.true_depth, 1.25).ok().map(|mut m| {
            m.ssim_recon = out.evaluation.map(|e| e.sim_pred);
            m
        });

        let event = if state == LandingState::ConfirmSite {
            let pass = match (&candidate, &committed) {
                (Some(c), Some(site)) => {
                    (c.world_point() - site.world_point()).norm() <= tracker.same_site_radius_m
                }
                _ => false,
            };
            if pass {
                LandingEvent::ConfirmPass
            } else {
                LandingEvent::ConfirmFail
            }
        } else {
            match tracker.update(candidate.as_ref(), t) {
                TrackerDecision::Confirmed(c) => {
                    committed = Some(c);
                    LandingEvent::Confirmed
                }
                TrackerDecision::Pending => LandingEvent::Pending,
                TrackerDecision::LostTimeout => LandingEvent::LostTimeout,
            }
        };
        let (next_state, command) = step_state_machine(state, event)?;
        state = next_state;
        match command {
            Command::NextWaypoint => match wander.next_waypoint() {
                Some(wp) => wander_target = wp,
                None => {
                    outcome = EpisodeOutcome::Aborted;
                    frames.push(FrameLogEntry {
                        t,
                        position: [pos.x, pos.y, pos.z],
                        state,
                        accumulation_s: out.accumulation_time,
                        accepted: Some(out.accepted),
                        sparse_density: out.sparse.density(),
                        candidate,
                        metrics,
                    });
                    break 'epochs;
                }
            },
            Command::Reselect => {
                tracker = CandidateTracker::new(t);
            }
            _ => {}
        }

        // This frame's motion still follows the previous command, which is
        // also the velocity the LiDAR lookahead assumed; the command decided
        // this frame is actuated from the next one.
        let dt = camera_dt.max(out.accumulation_time);
        let mut next_pos = pos + vel * dt;
        if let Some((tx, ty)) = cmd_target {
            let need = ((tx - pos.x).powi(2) + (ty - pos.y).powi(2)).sqrt();
            let planned = (vel.xy().norm()) * dt;
            if planned >= need {
                next_pos.x = tx;
                next_pos.y = ty;
            }
        }
        if vel.z < 0.0 {
            // One slow frame must not carry the vehicle through the hover
            // gate, so descent stops exactly at the confirm altitude.
            let floor =
                ground_under(&terrain, next_pos.x, next_pos.y) + config.confirm_altitude_m;
            next_pos.z = next_pos.z.max(floor);
        }
        pos = next_pos;
        let t_next = t + dt;

        // The scanner keeps scanning whether or not the completion consumed
        // its packets, so round the frame's returns out to everything it
        // physically produced before t_next.
        let mut fresh = fresh.into_inner();
        for j in packets_made.get()..((dt / packet_dt).ceil() as usize) {
            fresh.extend(sample_packet(j)?.points);
        }
        window.extend(fresh.into_iter().filter(|p| p.timestamp < t_next));
        t = t_next;

        if state == LandingState::Descend {
            let agl = pos.z - ground_under(&terrain, pos.x, pos.y);
            if agl <= config.confirm_altitude_m {
                let (s, _) = step_state_machine(state, LandingEvent::AltitudeBelowThreshold)?;
                state = s;
            }
        }

        // Velocity for the next frame under the state just entered, with
        // the target pinned so integration cannot overshoot it.
        cmd_target = None;
        vel = match state {
            LandingState::SelectSite | LandingState::ConfirmSite => Vector3::zeros(),
            LandingState::Wander => {
                cmd_target = Some(wander_target);
                let to = Vector3::new(wander_target.0 - pos.x, wander_target.1 - pos.y, 0.0);
                let d = to.norm();
                if d > 1e-9 {
                    to * (kin.horizontal_speed_mps / d)
                } else {
                    Vector3::zeros()
                }
            }
            LandingState::Descend => match committed {
                Some(site) => {
                    let w = site.world_point();
                    cmd_target = Some((w.x, w.y));
                    let to = Vector3::new(w.x - pos.x, w.y - pos.y, 0.0);
                    let d = to.norm();
                    let horizontal = if d > 1e-9 {
                        to * (kin.horizontal_speed_mps / d)
                    } else {
                        Vector3::zeros()
                    };
                    // Vertical speed ramps in as the site comes underneath.
                    let ramp = (1.0 - d / 3.0).clamp(0.0, 1.0);
                    horizontal + Vector3::new(0.0, 0.0, -kin.descent_speed_mps * ramp)
                }
                None => Vector3::zeros(),
            },
            _ => Vector3::zeros(),
        };

        frames.push(FrameLogEntry {
            t,
            position: [pos.x, pos.y, pos.z],
            state,
            accumulation_s: out.accumulation_time,
            accepted: Some(out.accepted),
            sparse_density: out.sparse.density(),
            candidate,
            metrics,
        });
    }

    let distance_to_safe_m =
        touchdown.and_then(|p| distance_to_nearest_safe(&oracle, (p[0], p[1]), 20.0));
    let (mean_acc, max_acc) = if acc_times.is_empty() {
        (0.0, 0.0)
    } else {
        let sum: f64 = acc_times.iter().sum();
        (sum / acc_times.len() as f64, acc_times.iter().cloned().fold(0.0, f64::max))
    };
    Ok(EpisodeReport {
        seed: config.seed,
        outcome,
        touchdown,
        distance_to_safe_m,
        mean_accumulation_s: mean_acc,
        max_accumulation_s: max_acc,
        frames,
        trajectory,
    })
}
