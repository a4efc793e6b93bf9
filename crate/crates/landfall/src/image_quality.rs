//! SSIM, cross-view synthesis, and the stereo self-check.
//!
//! A predicted depth map is judged by how well it explains the other camera
//! of a stereo rig: warp the left image into the right view using the
//! prediction, then compare against the real right image with SSIM. The
//! decision rule brackets the prediction between two references measured
//! the same way: the raw left/right similarity (no depth knowledge at all)
//! and the similarity achieved by interpolated sparse LiDAR depth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth_fusion::{nn_interpolate, FusionError, SparseDepth};
use crate::geometry::{backproject, project, CameraIntrinsics, GeometryError, Transform};
use crate::grid::{DepthKind, DepthMap, GrayImage, Grid, Mask};

/// SSIM constants for unit dynamic range.
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Margin a prediction must clear above the raw stereo similarity when no
/// sparse reference is available (second clause of the acceptance rule).
const ACCEPT_MARGIN: f64 = 0.2;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("images are {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimensionMismatch { a_w: usize, a_h: usize, b_w: usize, b_h: usize },
    #[error("no fully valid 3x3 window under the mask")]
    EmptyMask,
    #[error("warp landed no source pixel inside the target image")]
    DegenerateWarp,
    #[error("source depth has no known pixels")]
    NoDepth,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Per-window SSIM statistics over every pixel whose full 3x3 neighbourhood
/// is valid. Shared with the training losses, which need the same windows
/// to differentiate through.
pub(crate) struct SsimStats {
    /// Centre `(row, col)` of each contributing window.
    pub centres: Vec<(usize, usize)>,
    pub mu_a: Vec<f64>,
    pub mu_b: Vec<f64>,
    /// Population variances and covariance over the 9 samples.
    pub var_a: Vec<f64>,
    pub var_b: Vec<f64>,
    pub cov: Vec<f64>,
    /// Per-window structural similarity.
    pub s: Vec<f64>,
}

impl SsimStats {
    pub fn mean(&self) -> f64 {
        self.s.iter().sum::<f64>() / self.s.len() as f64
    }
}

pub(crate) fn ssim_stats(a: &GrayImage, b: &GrayImage, valid: &Mask) -> Result<SsimStats, QualityError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(QualityError::DimensionMismatch {
            a_w: a.width(),
            a_h: a.height(),
            b_w: b.width(),
            b_h: b.height(),
        });
    }
    if valid.width() != a.width() || valid.height() != a.height() {
        return Err(QualityError::DimensionMismatch {
            a_w: a.width(),
            a_h: a.height(),
            b_w: valid.width(),
            b_h: valid.height(),
        });
    }
    let (w, h) = (a.width(), a.height());
    let mut stats = SsimStats {
        centres: Vec::new(),
        mu_a: Vec::new(),
        mu_b: Vec::new(),
        var_a: Vec::new(),
        var_b: Vec::new(),
        cov: Vec::new(),
        s: Vec::new(),
    };
    for row in 1..h.saturating_sub(1) {
        'window: for col in 1..w - 1 {
            let mut sum_a = 0.0;
            let mut sum_b = 0.0;
            let mut sum_aa = 0.0;
            let mut sum_bb = 0.0;
            let mut sum_ab = 0.0;
            for dr in 0..3 {
                for dc in 0..3 {
                    let (r, c) = (row + dr - 1, col + dc - 1);
                    if !*valid.get(r, c) {
                        continue 'window;
                    }
                    let x = *a.get(r, c);
                    let y = *b.get(r, c);
                    sum_a += x;
                    sum_b += y;
                    sum_aa += x * x;
                    sum_bb += y * y;
                    sum_ab += x * y;
                }
            }
            let n = 9.0;
            let mu_a = sum_a / n;
            let mu_b = sum_b / n;
            let var_a = sum_aa / n - mu_a * mu_a;
            let var_b = sum_bb / n - mu_b * mu_b;
            let cov = sum_ab / n - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2))
                / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
            stats.centres.push((row, col));
            stats.mu_a.push(mu_a);
            stats.mu_b.push(mu_b);
            stats.var_a.push(var_a);
            stats.var_b.push(var_b);
            stats.cov.push(cov);
            stats.s.push(s);
        }
    }
    if stats.s.is_empty() {
        return Err(QualityError::EmptyMask);
    }
    Ok(stats)
}

/// Mean structural similarity with a 3x3 uniform block filter.
///
/// Only windows that lie fully inside the image with all nine pixels valid
/// contribute; the result is their unweighted mean. The raw index can be
/// slightly negative for anticorrelated inputs; callers that need `[0, 1]`
/// clamp it themselves.
pub fn ssim(a: &GrayImage, b: &GrayImage, valid: &Mask) -> Result<f64, QualityError> {
    Ok(ssim_stats(a, b, valid)?.mean())
}

/// SSIM over the whole image.
pub fn ssim_full(a: &GrayImage, b: &GrayImage) -> Result<f64, QualityError> {
    let mask = Mask::filled(a.width(), a.height(), true);
    ssim(a, b, &mask)
}

/// Warps `source` into a target camera displaced by `target_from_source`.
///
/// Forward splat: every known source pixel is backprojected with its depth,
/// moved into the target frame, and splatted onto its nearest target pixel.
/// Occlusions resolve by z-buffer (nearest target depth wins). The returned
/// mask flags target pixels that received a splat.
pub fn synthesize_view(
    source: &GrayImage,
    source_depth: &DepthMap,
    target_from_source: &Transform,
    k: &CameraIntrinsics,
) -> Result<(GrayImage, Mask), QualityError> {
    if source.width() != source_depth.width() || source.height() != source_depth.height() {
        return Err(QualityError::DimensionMismatch {
            a_w: source.width(),
            a_h: source.height(),
            b_w: source_depth.width(),
            b_h: source_depth.height(),
        });
    }
    if source_depth.known_count() == 0 {
        return Err(QualityError::NoDepth);
    }
    let mut image = GrayImage::filled(k.width, k.height, 0.0);
    let mut mask = Mask::filled(k.width, k.height, false);
    let mut zbuf = Grid::filled(k.width, k.height, f64::INFINITY);
    for (row, col, depth) in source_depth.iter_known() {
        let p_src = match source_depth.kind() {
            DepthKind::PlaneDepth => backproject((col as f64, row as f64), depth, k)?,
            DepthKind::RayDepth => k.ray((col as f64, row as f64)) * depth,
        };
        let p_tgt = target_from_source.apply(&p_src);
        if p_tgt.z <= 0.0 {
            continue;
        }
        let (u, v) = project(&p_tgt, k)?;
        let (uc, vr) = (u.round(), v.round());
        if uc < 0.0 || vr < 0.0 || uc > (k.width - 1) as f64 || vr > (k.height - 1) as f64 {
            continue;
        }
        let (tr, tc) = (vr as usize, uc as usize);
        if p_tgt.z < *zbuf.get(tr, tc) {
            *zbuf.get_mut(tr, tc) = p_tgt.z;
            *image.get_mut(tr, tc) = *source.get(row, col);
            *mask.get_mut(tr, tc) = true;
        }
    }
    if !mask.as_slice().iter().any(|&m| m) {
        return Err(QualityError::DegenerateWarp);
    }
    Ok((image, mask))
}

/// Outcome of the stereo self-check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Raw left/right similarity, the floor any depth knowledge must beat.
    pub sim: f64,
    /// Similarity achieved by interpolated sparse depth alone, if any
    /// sparse returns were available.
    pub sim_d: Option<f64>,
    /// Similarity achieved by the prediction under test.
    pub sim_pred: f64,
    pub accepted: bool,
}

/// Runs the self-check for a predicted depth map.
///
/// All similarities are clamped to `[0, 1]` before thresholding. The
/// prediction is accepted when it beats the midpoint of the raw-stereo and
/// sparse-depth references, or clears the raw-stereo score by 0.2 outright.
/// With an empty sparse map only the second clause applies.
pub fn evaluate_prediction(
    left: &GrayImage,
    right: &GrayImage,
    pred: &DepthMap,
    sparse: &SparseDepth,
    right_from_left: &Transform,
    k: &CameraIntrinsics,
) -> Result<EvalResult, QualityError> {
    let full = Mask::filled(left.width(), left.height(), true);
    let sim = ssim(left, right, &full)?.clamp(0.0, 1.0);

    let sim_d = if sparse.valid_count() > 0 {
        let dense = nn_interpolate(sparse, &full)?;
        let (recon, warp_mask) = synthesize_view(left, &dense, right_from_left, k)?;
        Some(ssim(right, &recon, &warp_mask)?.clamp(0.0, 1.0))
    } else {
        None
    };

    let (recon, warp_mask) = synthesize_view(left, pred, right_from_left, k)?;
    let sim_pred = ssim(right, &recon, &warp_mask)?.clamp(0.0, 1.0);

    let accepted = match sim_d {
        Some(sd) => sim_pred > (sim + sd) / 2.0 || sim_pred > sim + ACCEPT_MARGIN,
        None => sim_pred > sim + ACCEPT_MARGIN,
    };
    Ok(EvalResult { sim, sim_d, sim_pred, accepted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth_fusion::rasterize_sparse;
    use crate::geometry::Transform;
    use crate::terrain::{build_terrain, render_frame, TerrainSpec};
    use approx::assert_relative_eq;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_vec(w, h, (0..w * h).map(|_| rng.gen()).collect())
    }

    fn nadir_pose(x: f64, y: f64, altitude: f64) -> Transform {
        Transform::new(
            UnitQuaternion::from_scaled_axis(Vector3::x() * std::f64::consts::PI),
            Vector3::new(x, y, altitude),
        )
    }

    /// Direct translation of the per-window definition, kept deliberately
    /// separate from the production accumulation loop.
    fn ssim_oracle(a: &GrayImage, b: &GrayImage) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for row in 1..a.height() - 1 {
            for col in 1..a.width() - 1 {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        xs.push(*a.get((row as i64 + dr) as usize, (col as i64 + dc) as usize));
                        ys.push(*b.get((row as i64 + dr) as usize, (col as i64 + dc) as usize));
                    }
                }
                let mx = xs.iter().sum::<f64>() / 9.0;
                let my = ys.iter().sum::<f64>() / 9.0;
                let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / 9.0;
                let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / 9.0;
                let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / 9.0;
                total += ((2.0 * mx * my + 1e-4) * (2.0 * cxy + 9e-4))
                    / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn identical_images_score_one() {
        let img = random_image(24, 18, 5);
        assert_relative_eq!(ssim_full(&img, &img).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_images_score_one() {
        let a = GrayImage::filled(16, 16, 0.5);
        let b = GrayImage::filled(16, 16, 0.5);
        assert_relative_eq!(ssim_full(&a, &b).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn matches_window_oracle_on_random_and_inverted_images() {
        for seed in 0..5 {
            let a = random_image(20, 20, seed);
            let inverted = a.map(|v| 1.0 - v);
            assert_relative_eq!(ssim_full(&a, &inverted).unwrap(), ssim_oracle(&a, &inverted), epsilon = 1e-9);
            let b = random_image(20, 20, seed + 100);
            assert_relative_eq!(ssim_full(&a, &b).unwrap(), ssim_oracle(&a, &b), epsilon = 1e-9);
        }
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_image(20, 20, 1);
        let b = random_image(20, 20, 2);
        let ab = ssim_full(&a, &b).unwrap();
        let ba = ssim_full(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn masked_pixels_do_not_contribute() {
        let a = random_image(20, 20, 3);
        let mut b = a.clone();
        // Corrupt one pixel, then mask it out; every window touching it is
        // excluded, so the score must return to exactly 1.
        *b.get_mut(10, 10) = 2.0;
        let mut mask = Mask::filled(20, 20, true);
        assert!(ssim(&a, &b, &mask).unwrap() < 1.0);
        *mask.get_mut(10, 10) = false;
        assert_relative_eq!(ssim(&a, &b, &mask).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let a = random_image(8, 8, 4);
        let mask = Mask::filled(8, 8, false);
        assert!(matches!(ssim(&a, &a, &mask), Err(QualityError::EmptyMask)));
        // A single valid pixel cannot host a full window either.
        let mut one = Mask::filled(8, 8, false);
        *one.get_mut(4, 4) = true;
        assert!(matches!(ssim(&a, &a, &one), Err(QualityError::EmptyMask)));
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let k = CameraIntrinsics::centred(32.0, 32, 32).unwrap();
        let img = random_image(32, 32, 6);
        let depth = DepthMap::constant(32, 32, 7.0, DepthKind::PlaneDepth);
        let (out, mask) = synthesize_view(&img, &depth, &Transform::identity(), &k).unwrap();
        assert!(mask.as_slice().iter().all(|&m| m));
        for (r, c, v) in out.iter_cells() {
            assert_eq!(*v, *img.get(r, c));
        }
    }

    #[test]
    fn half_turn_about_axis_rotates_image_exactly() {
        let k = CameraIntrinsics::centred(32.0, 32, 32).unwrap();
        let img = random_image(32, 32, 7);
        let depth = DepthMap::constant(32, 32, 5.0, DepthKind::PlaneDepth);
        let half_turn = Transform::from_rotation(UnitQuaternion::from_scaled_axis(
            Vector3::z() * std::f64::consts::PI,
        ));
        let (out, mask) = synthesize_view(&img, &depth, &half_turn, &k).unwrap();
        assert!(mask.as_slice().iter().all(|&m| m));
        for (r, c, v) in out.iter_cells() {
            assert_eq!(*v, *img.get(31 - r, 31 - c), "pixel ({r},{c})");
        }
    }

    #[test]
    fn true_depth_synthesis_matches_other_eye() {
        let spec = TerrainSpec { texture_scale: 1.5, ..TerrainSpec::flat(40.0) };
        let terrain = build_terrain(&spec, 12).unwrap();
        let k = CameraIntrinsics::centred(96.0, 64, 64).unwrap();
        let left = render_frame(&terrain, &nadir_pose(0.0, 0.0, 10.0), &k).unwrap();
        let right = render_frame(&terrain, &nadir_pose(0.08, 0.0, 10.0), &k).unwrap();
        // Left camera frame -> right camera frame: the rig is a pure x
        // baseline in world, and both cameras share the nadir orientation.
        let right_from_left = right.camera_pose.inverse().compose(&left.camera_pose);
        let (synth, mask) = synthesize_view(&left.image, &left.true_depth, &right_from_left, &k).unwrap();
        let score = ssim(&right.image, &synth, &mask).unwrap();
        assert!(score >= 0.9, "ssim of true-depth synthesis is {score}");
    }

    #[test]
    fn degenerate_warp_is_an_error() {
        let k = CameraIntrinsics::centred(32.0, 32, 32).unwrap();
        let img = random_image(32, 32, 8);
        let depth = DepthMap::constant(32, 32, 1.0, DepthKind::PlaneDepth);
        // Move the target far sideways so nothing projects into frame.
        let away = Transform::from_translation(Vector3::new(50.0, 0.0, 0.0));
        assert!(matches!(
            synthesize_view(&img, &depth, &away, &k),
            Err(QualityError::DegenerateWarp)
        ));
    }

    fn stereo_fixture() -> (GrayImage, GrayImage, DepthMap, SparseDepth, Transform, CameraIntrinsics) {
        let spec = TerrainSpec { texture_scale: 1.5, ..TerrainSpec::flat(40.0) };
        let terrain = build_terrain(&spec, 14).unwrap();
        let k = CameraIntrinsics::centred(96.0, 64, 64).unwrap();
        let left = render_frame(&terrain, &nadir_pose(0.0, 0.0, 10.0), &k).unwrap();
        let right = render_frame(&terrain, &nadir_pose(0.08, 0.0, 10.0), &k).unwrap();
        let right_from_left = right.camera_pose.inverse().compose(&left.camera_pose);
        // Sparse cover: every third pixel of the truth.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut points = Vec::new();
        for (r, c, d) in left.true_depth.iter_known() {
            if rng.gen::<f64>() < 0.5 {
                let p = backproject((c as f64, r as f64), d, &k).unwrap();
                points.push((0.0, p));
            }
        }
        let sparse = rasterize_sparse(&points, &k, 0.0);
        (left.image, right.image, left.true_depth, sparse, right_from_left, k)
    }

    #[test]
    fn true_depth_prediction_is_accepted() {
        let (left, right, truth, sparse, right_from_left, k) = stereo_fixture();
        let result = evaluate_prediction(&left, &right, &truth, &sparse, &right_from_left, &k).unwrap();
        assert!(result.accepted, "truth should pass the self-check: {result:?}");
        assert!(result.sim_d.is_some());
        assert!(result.sim_pred > result.sim);
    }

    #[test]
    fn wildly_wrong_prediction_is_rejected() {
        let (left, right, _, sparse, right_from_left, k) = stereo_fixture();
        let wrong = DepthMap::constant(64, 64, 1.0, DepthKind::PlaneDepth);
        let result = evaluate_prediction(&left, &right, &wrong, &sparse, &right_from_left, &k).unwrap();
        assert!(!result.accepted, "1 m constant on a 10 m scene must fail: {result:?}");
    }

    #[test]
    fn acceptance_rule_matches_stored_fields() {
        let (left, right, truth, sparse, right_from_left, k) = stereo_fixture();
        let empty = SparseDepth::empty(64, 64);
        for (pred, sp) in [(&truth, &sparse), (&truth, &empty)] {
            let r = evaluate_prediction(&left, &right, pred, sp, &right_from_left, &k).unwrap();
            let expect = match r.sim_d {
                Some(sd) => r.sim_pred > (r.sim + sd) / 2.0 || r.sim_pred > r.sim + 0.2,
                None => r.sim_pred > r.sim + 0.2,
            };
            assert_eq!(r.accepted, expect);
            assert!(r.sim >= 0.0 && r.sim <= 1.0 && r.sim_pred >= 0.0 && r.sim_pred <= 1.0);
        }
    }

    #[test]
    fn empty_sparse_uses_margin_clause_only() {
        let (left, right, truth, _, right_from_left, k) = stereo_fixture();
        let empty = SparseDepth::empty(64, 64);
        let r = evaluate_prediction(&left, &right, &truth, &empty, &right_from_left, &k).unwrap();
        assert!(r.sim_d.is_none());
        assert_eq!(r.accepted, r.sim_pred > r.sim + 0.2);
    }

    #[test]
    fn nested_errors_do_not_improve_by_growing() {
        let (left, right, truth, _, right_from_left, k) = stereo_fixture();
        let mut prev = f64::INFINITY;
        for scale in [0.0, 0.4, 0.8, 1.6] {
            let pred = DepthMap::from_grid(truth.raw().map(|d| d + scale), DepthKind::PlaneDepth);
            let (recon, mask) = synthesize_view(&left, &pred, &right_from_left, &k).unwrap();
            let score = ssim(&right, &recon, &mask).unwrap();
            assert!(score <= prev + 1e-6, "error {scale} scored {score}, above {prev}");
            prev = score;
        }
    }
}
