//! Depth completion: losses, the variational reference predictor, the
//! dynamic-time inference loop, and evaluation metrics.
//!
//! The predictor is deliberately a pluggable interface. The reference
//! implementation refines a seeded depth map by gradient descent on the
//! composite loss; a learned model can be slotted in behind [`DepthPredictor`]
//! without touching the rest of the pipeline.

mod dynamic;
mod losses;
mod refine;

pub use dynamic::{dynamic_completion, CameraFrame, CompletionOutcome, DynamicConfig, SensorEvent};
pub use losses::{
    loss_depth, loss_depth_grad, loss_photometric, loss_photometric_grad, loss_ratio,
    loss_ratio_grad, loss_smooth, loss_smooth_grad,
};
pub use refine::{refine_depth, RefineOptions};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth_fusion::{nn_interpolate, FusionError, SparseDepth};
use crate::geometry::{CameraIntrinsics, GeometryError, Transform};
use crate::grid::{DepthKind, DepthMap, GrayImage, Mask};
use crate::image_quality::QualityError;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("prediction is {w}x{h} but the other input is {ow}x{oh}")]
    DimensionMismatch { w: usize, h: usize, ow: usize, oh: usize },
    #[error("reference depth has no valid pixel overlapping the prediction")]
    EmptyReference,
    #[error("photometric loss needs at least one neighbouring view")]
    NoNeighbors,
    #[error("no pixel of the prediction warps inside a neighbour image")]
    DegenerateWarp,
    #[error("prediction needs an image, a sparse map, or both")]
    NoInput,
    #[error("prediction and ground truth share no valid pixel")]
    EmptyOverlap,
    #[error("line search failed {failures} times in a row (best objective {objective})")]
    OptimizerStall {
        /// Lowest-objective iterate reached before the stall.
        best: Box<DepthMap>,
        objective: f64,
        failures: usize,
    },
    #[error("sensor stream ended before a camera frame arrived")]
    StreamExhausted,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Quality(#[from] QualityError),
}

/// Weights of the composite objective
/// `C = alpha_d*C_d + alpha_r*C_r + alpha_p*C_p + alpha_s*C_s`,
/// plus the SSIM/L1 mix inside the photometric term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default = "default_alpha_d")]
    pub alpha_d: f64,
    #[serde(default = "default_alpha_r")]
    pub alpha_r: f64,
    #[serde(default = "default_alpha_p")]
    pub alpha_p: f64,
    #[serde(default = "default_alpha_s")]
    pub alpha_s: f64,
    #[serde(default = "default_alpha_ssim")]
    pub alpha_ssim: f64,
}

fn default_alpha_d() -> f64 {
    1.0
}
fn default_alpha_r() -> f64 {
    1.0
}
fn default_alpha_p() -> f64 {
    2.0
}
fn default_alpha_s() -> f64 {
    1.0
}
fn default_alpha_ssim() -> f64 {
    0.85
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_d: default_alpha_d(),
            alpha_r: default_alpha_r(),
            alpha_p: default_alpha_p(),
            alpha_s: default_alpha_s(),
            alpha_ssim: default_alpha_ssim(),
        }
    }
}

/// How much of the accumulated cloud each training-style draw keeps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DensityPolicy {
    /// Probability of dropping the cloud entirely (image-only prediction).
    pub p_image_only: f64,
    /// Uniform keep-fraction range used otherwise.
    pub density_range: (f64, f64),
}

impl Default for DensityPolicy {
    fn default() -> Self {
        Self {
            p_image_only: 0.2,
            density_range: (0.1, 0.5),
        }
    }
}

/// Draws either 0 (image-only) or a keep-fraction uniform in the policy
/// range. Deterministic in the seed.
pub fn sample_density(policy: &DensityPolicy, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.gen::<f64>() < policy.p_image_only {
        0.0
    } else {
        let (lo, hi) = policy.density_range;
        rng.gen_range(lo..=hi)
    }
}

/// Accuracy of a completed depth map against dense ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub rmse_mm: f64,
    /// Mean |pred - gt| / gt, scaled by 1000 so it sits alongside the
    /// millimetre RMSE column.
    pub rel_mm: f64,
    /// Fraction of pixels with max(pred/gt, gt/pred) below the threshold.
    pub delta: f64,
    /// Reconstruction similarity from the self-evaluator, filled by the
    /// caller when available.
    pub ssim_recon: Option<f64>,
}

/// Compares prediction and ground truth over their jointly known pixels.
pub fn compute_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    delta_threshold: f64,
) -> Result<DepthMetrics, PredictorError> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(PredictorError::DimensionMismatch {
            w: pred.width(),
            h: pred.height(),
            ow: gt.width(),
            oh: gt.height(),
        });
    }
    let mut sq = 0.0;
    let mut rel = 0.0;
    let mut under = 0usize;
    let mut n = 0usize;
    for (r, c, g) in gt.iter_known() {
        let Some(p) = pred.get(r, c) else { continue };
        sq += (p - g) * (p - g);
        rel += (p - g).abs() / g;
        if (p / g).max(g / p) < delta_threshold {
            under += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(PredictorError::EmptyOverlap);
    }
    Ok(DepthMetrics {
        rmse_mm: (sq / n as f64).sqrt() * 1000.0,
        rel_mm: rel / n as f64 * 1000.0,
        delta: under as f64 / n as f64,
        ssim_recon: None,
    })
}

/// Everything a prediction needs beyond the raw inputs.
#[derive(Clone)]
pub struct PredictContext {
    /// Neighbouring views for the photometric term, each with the transform
    /// taking current-camera points into the neighbour camera.
    pub neighbors: Vec<(GrayImage, Transform)>,
    /// Plane-depth prior used to seed image-only predictions, typically the
    /// estimated height above ground.
    pub altitude_prior: f64,
    /// Pixels eligible for completion; everything outside stays unknown.
    /// `None` means the full image.
    pub fov: Option<Mask>,
    pub refine: RefineOptions,
}

impl PredictContext {
    pub fn new(altitude_prior: f64) -> Self {
        Self {
            neighbors: Vec::new(),
            altitude_prior,
            fov: None,
            refine: RefineOptions::default(),
        }
    }
}

/// The extension point for depth completion back ends.
pub trait DepthPredictor {
    fn predict(
        &self,
        image: Option<&GrayImage>,
        sparse: Option<&SparseDepth>,
        ctx: &PredictContext,
        k: &CameraIntrinsics,
        weights: &LossWeights,
    ) -> Result<DepthMap, PredictorError>;
}

/// Reference predictor: seed from the sparse returns (or the altitude prior
/// when there are none), then descend the composite loss with the seed's
/// support fixed. A stalled line search is not fatal here; the best iterate
/// found so far is still the best completion available.
#[derive(Debug, Default, Clone, Copy)]
pub struct VariationalPredictor;

impl DepthPredictor for VariationalPredictor {
    fn predict(
        &self,
        image: Option<&GrayImage>,
        sparse: Option<&SparseDepth>,
        ctx: &PredictContext,
        k: &CameraIntrinsics,
        weights: &LossWeights,
    ) -> Result<DepthMap, PredictorError> {
        let has_sparse = sparse.map_or(false, |s| s.valid_count() > 0);
        if image.is_none() && !has_sparse {
            return Err(PredictorError::NoInput);
        }
        if let Some(img) = image {
            if img.width() != k.width || img.height() != k.height {
                return Err(PredictorError::DimensionMismatch {
                    w: img.width(),
                    h: img.height(),
                    ow: k.width,
                    oh: k.height,
                });
            }
        }
        let full;
        let fov = match &ctx.fov {
            Some(mask) => mask,
            None => {
                full = Mask::filled(k.width, k.height, true);
                &full
            }
        };

        let seed = if has_sparse {
            nn_interpolate(sparse.unwrap(), fov)?
        } else {
            let mut map = DepthMap::unknown(k.width, k.height, DepthKind::PlaneDepth);
            for (r, c, &inside) in fov.iter_cells() {
                if inside {
                    map.set(r, c, Some(ctx.altitude_prior));
                }
            }
            map
        };

        let empty;
        let sparse = match sparse {
            Some(s) => s,
            None => {
                empty = SparseDepth::empty(k.width, k.height);
                &empty
            }
        };
        match refine_depth(&seed, sparse, image, &ctx.neighbors, k, weights, &ctx.refine) {
            Ok(map) => Ok(map),
            Err(PredictorError::OptimizerStall { best, .. }) => Ok(*best),
            Err(e) => Err(e),
        }
    }
}

/// Runs the reference predictor. See [`DepthPredictor::predict`].
pub fn predict(
    image: Option<&GrayImage>,
    sparse: Option<&SparseDepth>,
    ctx: &PredictContext,
    k: &CameraIntrinsics,
    weights: &LossWeights,
) -> Result<DepthMap, PredictorError> {
    VariationalPredictor.predict(image, sparse, ctx, k, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn metrics_on_equal_maps() {
        let gt = DepthMap::constant(8, 8, 10.0, DepthKind::PlaneDepth);
        let m = compute_metrics(&gt, &gt, 1.25).unwrap();
        assert_eq!(m.rmse_mm, 0.0);
        assert_eq!(m.rel_mm, 0.0);
        assert_eq!(m.delta, 1.0);
        assert!(m.ssim_recon.is_none());
    }

    #[test]
    fn metrics_constant_offset() {
        let gt = DepthMap::constant(8, 8, 10.0, DepthKind::PlaneDepth);
        let pred = DepthMap::constant(8, 8, 11.0, DepthKind::PlaneDepth);
        let m = compute_metrics(&pred, &gt, 1.25).unwrap();
        assert_relative_eq!(m.rmse_mm, 1000.0, epsilon = 1e-9);
        assert_relative_eq!(m.rel_mm, 100.0, epsilon = 1e-9);
        assert_eq!(m.delta, 1.0);
        let m = compute_metrics(&pred, &gt, 1.05).unwrap();
        assert_eq!(m.delta, 0.0);
    }

    #[test]
    fn metrics_match_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let gt_grid = Grid::from_vec(12, 12, (0..144).map(|_| 5.0 + rng.gen::<f64>() * 5.0).collect());
            let pred_grid = Grid::from_vec(12, 12, (0..144).map(|_| 5.0 + rng.gen::<f64>() * 5.0).collect());
            let gt = DepthMap::from_grid(gt_grid.clone(), DepthKind::PlaneDepth);
            let pred = DepthMap::from_grid(pred_grid.clone(), DepthKind::PlaneDepth);
            let m = compute_metrics(&pred, &gt, 1.25).unwrap();

            let mut sq = 0.0;
            let mut rel = 0.0;
            let mut under = 0.0;
            for i in 0..144 {
                let (p, g) = (pred_grid.as_slice()[i], gt_grid.as_slice()[i]);
                sq += (p - g) * (p - g);
                rel += (p - g).abs() / g;
                if (p / g).max(g / p) < 1.25 {
                    under += 1.0;
                }
            }
            assert_relative_eq!(m.rmse_mm, (sq / 144.0).sqrt() * 1000.0, epsilon = 1e-9);
            assert_relative_eq!(m.rel_mm, rel / 144.0 * 1000.0, epsilon = 1e-9);
            assert_relative_eq!(m.delta, under / 144.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn metrics_need_overlap() {
        let gt = DepthMap::unknown(8, 8, DepthKind::PlaneDepth);
        let pred = DepthMap::constant(8, 8, 10.0, DepthKind::PlaneDepth);
        assert!(matches!(
            compute_metrics(&pred, &gt, 1.25),
            Err(PredictorError::EmptyOverlap)
        ));
    }

    #[test]
    fn density_policy_extremes() {
        let always_image = DensityPolicy { p_image_only: 1.0, ..DensityPolicy::default() };
        let never_image = DensityPolicy { p_image_only: 0.0, ..DensityPolicy::default() };
        for seed in 0..200 {
            assert_eq!(sample_density(&always_image, seed), 0.0);
            let d = sample_density(&never_image, seed);
            assert!((0.1..=0.5).contains(&d), "density {d} out of range");
        }
    }

    #[test]
    fn density_zero_fraction_matches_policy() {
        let policy = DensityPolicy::default();
        let n = 100_000u64;
        let zeros = (0..n).filter(|&s| sample_density(&policy, s) == 0.0).count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - 0.2).abs() < 0.01, "zero fraction {frac}");
    }

    #[test]
    fn predict_requires_some_input() {
        let k = CameraIntrinsics::centred(16.0, 16, 16).unwrap();
        let ctx = PredictContext::new(10.0);
        assert!(matches!(
            predict(None, None, &ctx, &k, &LossWeights::default()),
            Err(PredictorError::NoInput)
        ));
        let empty = SparseDepth::empty(16, 16);
        assert!(matches!(
            predict(None, Some(&empty), &ctx, &k, &LossWeights::default()),
            Err(PredictorError::NoInput)
        ));
    }
}
