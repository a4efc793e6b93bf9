//! Dynamic-time completion: predict as soon as a frame arrives, accumulate
//! more LiDAR only while the self-check keeps rejecting.

use nalgebra::Vector3;

use crate::depth_fusion::{nn_interpolate, AccumulationBuffer, SparseDepth};
use crate::geometry::{CameraIntrinsics, Transform};
use crate::grid::{DepthKind, DepthMap, GrayImage, Mask};
use crate::image_quality::{EvalResult, QualityError};

use super::{predict, LossWeights, PredictContext, PredictorError, RefineOptions};

/// One camera image with its pose in the world frame.
#[derive(Clone)]
pub struct CameraFrame {
    pub timestamp: f64,
    pub image: GrayImage,
    pub world_from_camera: Transform,
}

/// Time-ordered sensor input to the completion loop.
pub enum SensorEvent {
    Camera(CameraFrame),
    /// Points already motion-compensated into the target camera frame, each
    /// with its capture timestamp; `until` is the end of the packet's
    /// accumulation interval.
    Lidar {
        points: Vec<(f64, Vector3<f64>)>,
        until: f64,
    },
}

#[derive(Clone)]
pub struct DynamicConfig {
    /// Longest the loop will wait for more LiDAR after the frame, seconds.
    pub deadline: f64,
    pub weights: LossWeights,
    pub refine: RefineOptions,
    /// Seed depth for image-only predictions and the empty-buffer fallback.
    pub altitude_prior: f64,
    /// Completion support; `None` means the full image.
    pub fov: Option<Mask>,
    /// Earlier views for the photometric term, each an image with its
    /// world-from-camera pose.
    pub neighbor_views: Vec<(GrayImage, Transform)>,
}

impl DynamicConfig {
    pub fn new(altitude_prior: f64) -> Self {
        Self {
            deadline: 1.0,
            weights: LossWeights::default(),
            refine: RefineOptions::default(),
            altitude_prior,
            fov: None,
            neighbor_views: Vec::new(),
        }
    }
}

pub struct CompletionOutcome {
    pub depth: DepthMap,
    /// LiDAR time accumulated after the frame before the result was
    /// produced, seconds.
    pub accumulation_time: f64,
    /// False when the result is the interpolated fallback rather than an
    /// accepted prediction.
    pub accepted: bool,
    pub frame: CameraFrame,
    /// The rasterized buffer as of the returned result.
    pub sparse: SparseDepth,
    /// Last self-check, if any prediction was evaluated.
    pub evaluation: Option<EvalResult>,
}

/// Self-check hook; in production this wraps
/// [`crate::image_quality::evaluate_prediction`] with a neighbouring view
/// bound by the caller.
pub type Evaluator<'a> =
    dyn FnMut(&CameraFrame, &DepthMap, &SparseDepth) -> Result<EvalResult, QualityError> + 'a;

/// Runs the accumulate-predict-evaluate loop for the next camera frame in
/// the stream.
///
/// LiDAR events before the first camera frame only grow the buffer; the
/// accumulation clock starts at the frame. Each iteration predicts from the
/// current buffer and returns on acceptance. When the deadline expires (or
/// the stream runs dry) the buffer is interpolated directly, unknown outside
/// the FOV, and flagged as not accepted; an empty buffer falls back to the
/// altitude prior.
pub fn dynamic_completion(
    stream: &mut dyn Iterator<Item = SensorEvent>,
    buffer: &mut AccumulationBuffer,
    evaluator: &mut Evaluator<'_>,
    config: &DynamicConfig,
    k: &CameraIntrinsics,
) -> Result<CompletionOutcome, PredictorError> {
    let frame = loop {
        match stream.next() {
            Some(SensorEvent::Camera(f)) => break f,
            Some(SensorEvent::Lidar { points, .. }) => buffer.extend(points),
            None => return Err(PredictorError::StreamExhausted),
        }
    };

    let mut ctx = PredictContext::new(config.altitude_prior);
    ctx.fov = config.fov.clone();
    ctx.refine = config.refine;
    ctx.neighbors = config
        .neighbor_views
        .iter()
        .map(|(img, pose)| (img.clone(), pose.inverse().compose(&frame.world_from_camera)))
        .collect();

    let mut acc_time = 0.0f64;
    let mut last_eval = None;
    loop {
        if acc_time >= config.deadline {
            return fallback(frame, buffer, config, k, acc_time, last_eval);
        }
        let sparse = buffer.rasterize(k);
        let pred = predict(
            Some(&frame.image),
            (sparse.valid_count() > 0).then_some(&sparse),
            &ctx,
            k,
            &config.weights,
        )?;
        let eval = evaluator(&frame, &pred, &sparse)?;
        last_eval = Some(eval);
        if eval.accepted {
            return Ok(CompletionOutcome {
                depth: pred,
                accumulation_time: acc_time,
                accepted: true,
                frame,
                sparse,
                evaluation: last_eval,
            });
        }
        loop {
            match stream.next() {
                Some(SensorEvent::Lidar { points, until }) => {
                    buffer.extend(points);
                    acc_time = acc_time.max((until - frame.timestamp).max(0.0));
                    break;
                }
                // A newer frame cannot retire this one mid-completion; skip.
                Some(SensorEvent::Camera(_)) => continue,
                None => return fallback(frame, buffer, config, k, acc_time, last_eval),
            }
        }
    }
}

fn fallback(
    frame: CameraFrame,
    buffer: &AccumulationBuffer,
    config: &DynamicConfig,
    k: &CameraIntrinsics,
    acc_time: f64,
    last_eval: Option<EvalResult>,
) -> Result<CompletionOutcome, PredictorError> {
    let sparse = buffer.rasterize(k);
    let full;
    let fov = match &config.fov {
        Some(mask) => mask,
        None => {
            full = Mask::filled(k.width, k.height, true);
            &full
        }
    };
    let depth = if sparse.valid_count() > 0 {
        nn_interpolate(&sparse, fov)?
    } else {
        let mut map = DepthMap::unknown(k.width, k.height, DepthKind::PlaneDepth);
        for (r, c, &inside) in fov.iter_cells() {
            if inside {
                map.set(r, c, Some(config.altitude_prior));
            }
        }
        map
    };
    Ok(CompletionOutcome {
        depth,
        accumulation_time: acc_time,
        accepted: false,
        frame,
        sparse,
        evaluation: last_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::backproject;

    fn k16() -> CameraIntrinsics {
        CameraIntrinsics::centred(16.0, 16, 16).unwrap()
    }

    fn frame_at(t: f64) -> CameraFrame {
        CameraFrame {
            timestamp: t,
            image: GrayImage::filled(16, 16, 0.5),
            world_from_camera: Transform::identity(),
        }
    }

    fn packet(k: &CameraIntrinsics, until: f64, n: usize) -> SensorEvent {
        let points = (0..n)
            .map(|i| {
                let col = (i * 3) % 16;
                let row = (i * 5) % 16;
                (until, backproject((col as f64, row as f64), 10.0, k).unwrap())
            })
            .collect();
        SensorEvent::Lidar { points, until }
    }

    fn accept_all(_: &CameraFrame, _: &DepthMap, _: &SparseDepth) -> Result<EvalResult, QualityError> {
        Ok(EvalResult { sim: 0.5, sim_d: None, sim_pred: 0.9, accepted: true })
    }

    fn reject_all(_: &CameraFrame, _: &DepthMap, _: &SparseDepth) -> Result<EvalResult, QualityError> {
        Ok(EvalResult { sim: 0.5, sim_d: None, sim_pred: 0.4, accepted: false })
    }

    fn quick_config() -> DynamicConfig {
        let mut config = DynamicConfig::new(10.0);
        config.refine = RefineOptions { max_iters: 20, ..RefineOptions::default() };
        config
    }

    #[test]
    fn ends_without_frame_is_exhausted() {
        let k = k16();
        let mut stream = vec![packet(&k, 0.1, 4), packet(&k, 0.2, 4)].into_iter();
        let mut buffer = AccumulationBuffer::new(0.0);
        let err = dynamic_completion(&mut stream, &mut buffer, &mut accept_all, &quick_config(), &k);
        assert!(matches!(err, Err(PredictorError::StreamExhausted)));
    }

    #[test]
    fn zero_deadline_falls_back_before_any_prediction() {
        let k = k16();
        let mut stream = vec![packet(&k, -0.05, 6), SensorEvent::Camera(frame_at(0.0))].into_iter();
        let mut buffer = AccumulationBuffer::new(0.0);
        let mut config = quick_config();
        config.deadline = 0.0;
        let mut panicking: Box<Evaluator<'_>> = Box::new(|_, _, _| panic!("evaluator must not run"));
        let out = dynamic_completion(&mut stream, &mut buffer, &mut panicking, &config, &k).unwrap();
        assert!(!out.accepted);
        assert_eq!(out.accumulation_time, 0.0);
        assert!(out.evaluation.is_none());
        // Interpolated from the pre-frame packet, so fully known.
        assert_eq!(out.depth.known_count(), 256);
    }

    #[test]
    fn zero_deadline_empty_buffer_uses_prior() {
        let k = k16();
        let mut stream = vec![SensorEvent::Camera(frame_at(0.0))].into_iter();
        let mut buffer = AccumulationBuffer::new(0.0);
        let mut config = quick_config();
        config.deadline = 0.0;
        let out = dynamic_completion(&mut stream, &mut buffer, &mut accept_all, &config, &k).unwrap();
        assert!(!out.accepted);
        assert_eq!(out.depth.get(8, 8), Some(10.0));
        assert_eq!(out.sparse.valid_count(), 0);
    }

    #[test]
    fn immediate_acceptance_needs_no_accumulation() {
        let k = k16();
        let mut stream = vec![
            packet(&k, -0.05, 8),
            SensorEvent::Camera(frame_at(0.0)),
            packet(&k, 0.1, 8),
        ]
        .into_iter();
        let mut buffer = AccumulationBuffer::new(0.0);
        let mut seen_sparse = 0usize;
        let mut evaluator: Box<Evaluator<'_>> = Box::new(|_, _, sparse| {
            seen_sparse = sparse.valid_count();
            accept_all(&frame_at(0.0), &DepthMap::constant(1, 1, 1.0, DepthKind::PlaneDepth), sparse)
        });
        let out = dynamic_completion(&mut stream, &mut buffer, &mut evaluator, &quick_config(), &k).unwrap();
        drop(evaluator);
        assert!(out.accepted);
        assert_eq!(out.accumulation_time, 0.0);
        assert!(seen_sparse > 0, "pre-frame packet should already be in the buffer");
        assert!(stream.next().is_some(), "post-frame packet should not have been consumed");
    }

    #[test]
    fn rejection_accumulates_until_deadline() {
        let k = k16();
        let mut events = vec![SensorEvent::Camera(frame_at(0.0))];
        for i in 1..=15 {
            events.push(packet(&k, i as f64 * 0.1, 5));
        }
        let mut stream = events.into_iter();
        let mut buffer = AccumulationBuffer::new(0.0);
        let mut evals = 0usize;
        let mut evaluator: Box<Evaluator<'_>> = Box::new(|f, d, s| {
            evals += 1;
            reject_all(f, d, s)
        });
        let out = dynamic_completion(&mut stream, &mut buffer, &mut evaluator, &quick_config(), &k).unwrap();
        drop(evaluator);
        assert!(!out.accepted);
        assert!((out.accumulation_time - 1.0).abs() < 1e-9, "stopped at {}", out.accumulation_time);
        assert_eq!(evals, 10);
        assert!(out.evaluation.is_some());
        assert!(out.sparse.valid_count() > 0);
    }

    #[test]
    fn stream_drying_up_mid_loop_falls_back() {
        let k = k16();
        let mut stream = vec![
            SensorEvent::Camera(frame_at(0.0)),
            packet(&k, 0.1, 5),
        ]
        .into_iter();
        let mut buffer = AccumulationBuffer::new(0.0);
        let out = dynamic_completion(&mut stream, &mut buffer, &mut reject_all, &quick_config(), &k).unwrap();
        assert!(!out.accepted);
        assert!((out.accumulation_time - 0.1).abs() < 1e-9);
    }
}
