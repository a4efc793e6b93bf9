//! The four training losses and their analytic gradients.
//!
//! Every loss is a mean over its valid support rather than a sum, so values
//! are comparable across sparse densities and image sizes. Gradients are
//! with respect to the per-pixel predicted depths and are exercised against
//! central finite differences in the tests.

use nalgebra::Vector3;

use crate::depth_fusion::SparseDepth;
use crate::geometry::CameraIntrinsics;
use crate::grid::{bilinear_sample_with_grad, DepthKind, DepthMap, GrayImage, Grid, Mask};
use crate::image_quality::ssim_stats;
use crate::geometry::Transform;

use super::{LossWeights, PredictorError};

/// Mean squared difference against the sparse reference, over pixels where
/// both are known.
pub fn loss_depth(pred: &DepthMap, reference: &SparseDepth) -> Result<f64, PredictorError> {
    let (value, _) = depth_term(pred, reference, false)?;
    Ok(value)
}

/// [`loss_depth`] plus its gradient with respect to each predicted depth.
pub fn loss_depth_grad(pred: &DepthMap, reference: &SparseDepth) -> Result<(f64, Grid<f64>), PredictorError> {
    let (value, grad) = depth_term(pred, reference, true)?;
    Ok((value, grad.expect("gradient requested")))
}

fn depth_term(
    pred: &DepthMap,
    reference: &SparseDepth,
    with_grad: bool,
) -> Result<(f64, Option<Grid<f64>>), PredictorError> {
    check_dims(pred.width(), pred.height(), reference.width(), reference.height())?;
    let mut joint: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (r, c, d_ref) in reference.iter_valid() {
        if let Some(d_pred) = pred.get(r, c) {
            joint.push((r, c, d_pred, d_ref));
        }
    }
    if joint.is_empty() {
        return Err(PredictorError::EmptyReference);
    }
    let n = joint.len() as f64;
    let value = joint.iter().map(|&(_, _, p, d)| (p - d) * (p - d)).sum::<f64>() / n;
    let grad = with_grad.then(|| {
        let mut g = Grid::filled(pred.width(), pred.height(), 0.0);
        for &(r, c, p, d) in &joint {
            *g.get_mut(r, c) = 2.0 * (p - d) / n;
        }
        g
    });
    Ok((value, grad))
}

/// Mean relative error |pred - ref| / ref, which weights a fixed absolute
/// error more heavily the closer the ground is.
pub fn loss_ratio(pred: &DepthMap, reference: &SparseDepth) -> Result<f64, PredictorError> {
    let (value, _) = ratio_term(pred, reference, false)?;
    Ok(value)
}

pub fn loss_ratio_grad(pred: &DepthMap, reference: &SparseDepth) -> Result<(f64, Grid<f64>), PredictorError> {
    let (value, grad) = ratio_term(pred, reference, true)?;
    Ok((value, grad.expect("gradient requested")))
}

fn ratio_term(
    pred: &DepthMap,
    reference: &SparseDepth,
    with_grad: bool,
) -> Result<(f64, Option<Grid<f64>>), PredictorError> {
    check_dims(pred.width(), pred.height(), reference.width(), reference.height())?;
    let mut joint: Vec<(usize, usize, f64, f64)> = Vec::new();
    for (r, c, d_ref) in reference.iter_valid() {
        if let Some(d_pred) = pred.get(r, c) {
            joint.push((r, c, d_pred, d_ref));
        }
    }
    if joint.is_empty() {
        return Err(PredictorError::EmptyReference);
    }
    let n = joint.len() as f64;
    let value = joint.iter().map(|&(_, _, p, d)| (p - d).abs() / d).sum::<f64>() / n;
    let grad = with_grad.then(|| {
        let mut g = Grid::filled(pred.width(), pred.height(), 0.0);
        for &(r, c, p, d) in &joint {
            *g.get_mut(r, c) = signum(p - d) / (d * n);
        }
        g
    });
    Ok((value, grad))
}

/// Photometric consistency against one or more neighbouring views.
///
/// Each neighbour is inversely warped into the current view: every known
/// current pixel is backprojected with its predicted depth, moved by the
/// neighbour's `neighbor_from_current` transform, and bilinearly sampled in
/// the neighbour image. Per neighbour the loss is
/// `alpha * (1 - SSIM(warped, current)) / 2 + (1 - alpha) * mean |warped - current|`
/// over pixels whose warp landed inside the neighbour image; the result is
/// the mean over neighbours.
pub fn loss_photometric(
    pred: &DepthMap,
    current: &GrayImage,
    neighbors: &[(GrayImage, Transform)],
    k: &CameraIntrinsics,
    alpha_ssim: f64,
) -> Result<f64, PredictorError> {
    let (value, _) = photometric_term(pred, current, neighbors, k, alpha_ssim, false)?;
    Ok(value)
}

pub fn loss_photometric_grad(
    pred: &DepthMap,
    current: &GrayImage,
    neighbors: &[(GrayImage, Transform)],
    k: &CameraIntrinsics,
    alpha_ssim: f64,
) -> Result<(f64, Grid<f64>), PredictorError> {
    let (value, grad) = photometric_term(pred, current, neighbors, k, alpha_ssim, true)?;
    Ok((value, grad.expect("gradient requested")))
}

fn photometric_term(
    pred: &DepthMap,
    current: &GrayImage,
    neighbors: &[(GrayImage, Transform)],
    k: &CameraIntrinsics,
    alpha_ssim: f64,
    with_grad: bool,
) -> Result<(f64, Option<Grid<f64>>), PredictorError> {
    if neighbors.is_empty() {
        return Err(PredictorError::NoNeighbors);
    }
    check_dims(pred.width(), pred.height(), current.width(), current.height())?;
    let (w, h) = (pred.width(), pred.height());
    let (cx, cy) = k.principal;

    let mut total = 0.0;
    let mut grad = with_grad.then(|| Grid::filled(w, h, 0.0));

    for (neighbor, neighbor_from_current) in neighbors {
        check_dims(w, h, neighbor.width(), neighbor.height())?;
        // Warp the neighbour into the current view's support.
        let mut warped = GrayImage::filled(w, h, 0.0);
        let mut valid = Mask::filled(w, h, false);
        // d(warped intensity) / d(depth) for every valid pixel.
        let mut dwarp_dd = Grid::filled(w, h, 0.0);
        for (row, col, depth) in pred.iter_known() {
            let a = match pred.kind() {
                DepthKind::PlaneDepth => {
                    Vector3::new((col as f64 - cx) / k.focal, (row as f64 - cy) / k.focal, 1.0)
                }
                DepthKind::RayDepth => k.ray((col as f64, row as f64)),
            };
            let b = neighbor_from_current.rotation() * a;
            let q = b * depth + neighbor_from_current.translation();
            if q.z <= 1e-9 {
                continue;
            }
            let u = k.focal * q.x / q.z + cx;
            let v = k.focal * q.y / q.z + cy;
            let Some((value, gx, gy)) = bilinear_sample_with_grad(neighbor, u, v) else {
                continue;
            };
            *warped.get_mut(row, col) = value;
            *valid.get_mut(row, col) = true;
            if with_grad {
                let zz = q.z * q.z;
                let du_dd = k.focal * (b.x * q.z - q.x * b.z) / zz;
                let dv_dd = k.focal * (b.y * q.z - q.y * b.z) / zz;
                *dwarp_dd.get_mut(row, col) = gx * du_dd + gy * dv_dd;
            }
        }
        let n_valid = valid.as_slice().iter().filter(|&&m| m).count();
        if n_valid == 0 {
            return Err(PredictorError::DegenerateWarp);
        }

        let stats = ssim_stats(&warped, current, &valid).map_err(|_| PredictorError::DegenerateWarp)?;
        let ssim_mean = stats.mean();

        let mut l1 = 0.0;
        for (r, c, &m) in valid.iter_cells() {
            if m {
                l1 += (*warped.get(r, c) - *current.get(r, c)).abs();
            }
        }
        l1 /= n_valid as f64;
        total += alpha_ssim * (1.0 - ssim_mean) / 2.0 + (1.0 - alpha_ssim) * l1;

        if let Some(g) = grad.as_mut() {
            let scale = 1.0 / neighbors.len() as f64;
            // L1 part.
            for (r, c, &m) in valid.iter_cells() {
                if m {
                    let sign = signum(*warped.get(r, c) - *current.get(r, c));
                    *g.get_mut(r, c) += scale * (1.0 - alpha_ssim) / n_valid as f64 * sign * *dwarp_dd.get(r, c);
                }
            }
            // SSIM part: d total / d warped_j summed over every window the
            // pixel participates in, then chained through dwarp_dd.
            let n_windows = stats.s.len() as f64;
            let p = 1.0 / 9.0;
            const C1: f64 = 1e-4;
            const C2: f64 = 9e-4;
            for (widx, &(wr, wc)) in stats.centres.iter().enumerate() {
                let mu_a = stats.mu_a[widx];
                let mu_b = stats.mu_b[widx];
                let a1 = 2.0 * mu_a * mu_b + C1;
                let a2 = 2.0 * stats.cov[widx] + C2;
                let b1 = mu_a * mu_a + mu_b * mu_b + C1;
                let b2 = stats.var_a[widx] + stats.var_b[widx] + C2;
                let s = stats.s[widx];
                let front = -scale * alpha_ssim / 2.0 / n_windows * 2.0 * p / (b1 * b2);
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (r, c) = ((wr as i64 + dr) as usize, (wc as i64 + dc) as usize);
                        let x_j = *warped.get(r, c);
                        let y_j = *current.get(r, c);
                        let ds_dx = mu_b * a2 + (y_j - mu_b) * a1 - s * (mu_a * b2 + (x_j - mu_a) * b1);
                        *g.get_mut(r, c) += front * ds_dx * *dwarp_dd.get(r, c);
                    }
                }
            }
        }
    }
    Ok((total / neighbors.len() as f64, grad))
}

/// First- and second-order smoothness: mean L1 gradient magnitude by forward
/// differences plus mean absolute 5-point Laplacian, each over pixels whose
/// participating neighbours are all known.
pub fn loss_smooth(pred: &DepthMap) -> f64 {
    let (value, _) = smooth_term(pred, false);
    value
}

pub fn loss_smooth_grad(pred: &DepthMap) -> (f64, Grid<f64>) {
    let (value, grad) = smooth_term(pred, true);
    (value, grad.expect("gradient requested"))
}

fn smooth_term(pred: &DepthMap, with_grad: bool) -> (f64, Option<Grid<f64>>) {
    let (w, h) = (pred.width(), pred.height());
    let d = |r: usize, c: usize| pred.get(r, c);

    let mut sum1 = 0.0;
    let mut n1 = 0usize;
    let mut sum2 = 0.0;
    let mut n2 = 0usize;
    for r in 0..h {
        for c in 0..w {
            if r + 1 < h && c + 1 < w {
                if let (Some(p), Some(px), Some(py)) = (d(r, c), d(r, c + 1), d(r + 1, c)) {
                    sum1 += (px - p).abs() + (py - p).abs();
                    n1 += 1;
                }
            }
            if r >= 1 && r + 1 < h && c >= 1 && c + 1 < w {
                if let (Some(p), Some(up), Some(down), Some(left), Some(right)) =
                    (d(r, c), d(r - 1, c), d(r + 1, c), d(r, c - 1), d(r, c + 1))
                {
                    sum2 += (up + down + left + right - 4.0 * p).abs();
                    n2 += 1;
                }
            }
        }
    }
    let t1 = if n1 > 0 { sum1 / n1 as f64 } else { 0.0 };
    let t2 = if n2 > 0 { sum2 / n2 as f64 } else { 0.0 };
    let value = t1 + t2;

    let grad = with_grad.then(|| {
        let mut g = Grid::filled(w, h, 0.0);
        for r in 0..h {
            for c in 0..w {
                if r + 1 < h && c + 1 < w {
                    if let (Some(p), Some(px), Some(py)) = (d(r, c), d(r, c + 1), d(r + 1, c)) {
                        let sx = signum(px - p) / n1 as f64;
                        let sy = signum(py - p) / n1 as f64;
                        *g.get_mut(r, c) += -sx - sy;
                        *g.get_mut(r, c + 1) += sx;
                        *g.get_mut(r + 1, c) += sy;
                    }
                }
                if r >= 1 && r + 1 < h && c >= 1 && c + 1 < w {
                    if let (Some(p), Some(up), Some(down), Some(left), Some(right)) =
                        (d(r, c), d(r - 1, c), d(r + 1, c), d(r, c - 1), d(r, c + 1))
                    {
                        let s = signum(up + down + left + right - 4.0 * p) / n2 as f64;
                        *g.get_mut(r, c) += -4.0 * s;
                        *g.get_mut(r - 1, c) += s;
                        *g.get_mut(r + 1, c) += s;
                        *g.get_mut(r, c - 1) += s;
                        *g.get_mut(r, c + 1) += s;
                    }
                }
            }
        }
        g
    });
    (value, grad)
}

/// Weighted composite objective and its gradient over known pixels.
///
/// Terms without support are skipped rather than erroring: a sparse map with
/// no overlap on the prediction drops the depth and ratio terms (image-only
/// refinement) and an empty neighbour list drops the photometric term.
pub(super) fn composite_objective(
    pred: &DepthMap,
    sparse: &SparseDepth,
    current: Option<&GrayImage>,
    neighbors: &[(GrayImage, Transform)],
    k: &CameraIntrinsics,
    weights: &LossWeights,
) -> Result<(f64, Grid<f64>), PredictorError> {
    let mut value = 0.0;
    let mut grad = Grid::filled(pred.width(), pred.height(), 0.0);
    let mut add = |v: f64, g: &Grid<f64>, w: f64| {
        value += w * v;
        for (cell, gv) in grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *cell += w * gv;
        }
    };
    if weights.alpha_d > 0.0 {
        match loss_depth_grad(pred, sparse) {
            Ok((v, g)) => add(v, &g, weights.alpha_d),
            Err(PredictorError::EmptyReference) => {}
            Err(e) => return Err(e),
        }
    }
    if weights.alpha_r > 0.0 {
        match loss_ratio_grad(pred, sparse) {
            Ok((v, g)) => add(v, &g, weights.alpha_r),
            Err(PredictorError::EmptyReference) => {}
            Err(e) => return Err(e),
        }
    }
    if weights.alpha_p > 0.0 && !neighbors.is_empty() {
        if let Some(current) = current {
            let (v, g) = loss_photometric_grad(pred, current, neighbors, k, weights.alpha_ssim)?;
            add(v, &g, weights.alpha_p);
        }
    }
    if weights.alpha_s > 0.0 {
        let (v, g) = loss_smooth_grad(pred);
        add(v, &g, weights.alpha_s);
    }
    Ok((value, grad))
}

/// Objective value only, for line-search candidates.
pub(super) fn composite_value(
    pred: &DepthMap,
    sparse: &SparseDepth,
    current: Option<&GrayImage>,
    neighbors: &[(GrayImage, Transform)],
    k: &CameraIntrinsics,
    weights: &LossWeights,
) -> Result<f64, PredictorError> {
    let mut value = 0.0;
    if weights.alpha_d > 0.0 {
        match loss_depth(pred, sparse) {
            Ok(v) => value += weights.alpha_d * v,
            Err(PredictorError::EmptyReference) => {}
            Err(e) => return Err(e),
        }
    }
    if weights.alpha_r > 0.0 {
        match loss_ratio(pred, sparse) {
            Ok(v) => value += weights.alpha_r * v,
            Err(PredictorError::EmptyReference) => {}
            Err(e) => return Err(e),
        }
    }
    if weights.alpha_p > 0.0 && !neighbors.is_empty() {
        if let Some(current) = current {
            value += weights.alpha_p * loss_photometric(pred, current, neighbors, k, weights.alpha_ssim)?;
        }
    }
    if weights.alpha_s > 0.0 {
        value += weights.alpha_s * loss_smooth(pred);
    }
    Ok(value)
}

fn signum(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_dims(w: usize, h: usize, ow: usize, oh: usize) -> Result<(), PredictorError> {
    if w != ow || h != oh {
        return Err(PredictorError::DimensionMismatch { w, h, ow, oh });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth_fusion::rasterize_sparse;
    use crate::geometry::backproject;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k16() -> CameraIntrinsics {
        CameraIntrinsics::centred(16.0, 16, 16).unwrap()
    }

    fn random_depth(w: usize, h: usize, rng: &mut ChaCha8Rng) -> DepthMap {
        DepthMap::from_grid(
            Grid::from_vec(w, h, (0..w * h).map(|_| 8.0 + rng.gen::<f64>() * 2.0).collect()),
            DepthKind::PlaneDepth,
        )
    }

    fn random_sparse(w: usize, h: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseDepth {
        let k = CameraIntrinsics::centred(16.0, w, h).unwrap();
        let mut pts = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if rng.gen::<f64>() < density {
                    let depth = 8.0 + rng.gen::<f64>() * 2.0;
                    pts.push((0.0, backproject((c as f64, r as f64), depth, &k).unwrap()));
                }
            }
        }
        rasterize_sparse(&pts, &k, 0.0)
    }

    fn smooth_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut img = GrayImage::filled(w, h, 0.0);
        let phase = seed as f64;
        for r in 0..h {
            for c in 0..w {
                let v = 0.5
                    + 0.2 * ((c as f64) * 0.7 + phase).sin()
                    + 0.2 * ((r as f64) * 0.9 - phase * 0.3).cos();
                *img.get_mut(r, c) = v.clamp(0.0, 1.0);
            }
        }
        img
    }

    #[test]
    fn depth_loss_zero_and_substitution_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sparse = random_sparse(16, 16, 0.4, &mut rng);
        let exact = DepthMap::from_grid(
            sparse
                .depth()
                .raw()
                .map(|v| if v.is_nan() { 9.0 } else { *v }),
            DepthKind::PlaneDepth,
        );
        assert_eq!(loss_depth(&exact, &sparse).unwrap(), 0.0);

        let k = k16();
        let p = backproject((4.0, 4.0), 5.0, &k).unwrap();
        let one = rasterize_sparse(&[(0.0, p)], &k, 0.0);
        let pred = DepthMap::constant(16, 16, 7.0, DepthKind::PlaneDepth);
        assert_relative_eq!(loss_depth(&pred, &one).unwrap(), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn ratio_loss_scaling_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sparse = random_sparse(16, 16, 0.5, &mut rng);
        let doubled = DepthMap::from_grid(
            sparse.depth().raw().map(|v| if v.is_nan() { 9.0 } else { v * 2.0 }),
            DepthKind::PlaneDepth,
        );
        assert_relative_eq!(loss_ratio(&doubled, &sparse).unwrap(), 1.0, epsilon = 1e-12);
        // The same half-metre miss costs ten times more at 5 m than at 50 m.
        let k = k16();
        let near = rasterize_sparse(&[(0.0, backproject((8.0, 8.0), 5.0, &k).unwrap())], &k, 0.0);
        let far = rasterize_sparse(&[(0.0, backproject((8.0, 8.0), 50.0, &k).unwrap())], &k, 0.0);
        let near_pred = DepthMap::constant(16, 16, 5.5, DepthKind::PlaneDepth);
        let far_pred = DepthMap::constant(16, 16, 50.5, DepthKind::PlaneDepth);
        assert_relative_eq!(loss_ratio(&near_pred, &near).unwrap(), 0.1, epsilon = 1e-12);
        assert_relative_eq!(loss_ratio(&far_pred, &far).unwrap(), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn losses_match_direct_summation_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let pred = random_depth(16, 16, &mut rng);
            let sparse = random_sparse(16, 16, 0.3, &mut rng);
            let mut sq = 0.0;
            let mut rel = 0.0;
            let mut n = 0.0;
            for (r, c, d) in sparse.iter_valid() {
                let p = pred.get(r, c).unwrap();
                sq += (p - d) * (p - d);
                rel += (p - d).abs() / d;
                n += 1.0;
            }
            assert_relative_eq!(loss_depth(&pred, &sparse).unwrap(), sq / n, epsilon = 1e-12);
            assert_relative_eq!(loss_ratio(&pred, &sparse).unwrap(), rel / n, epsilon = 1e-12);

            let mut s1 = 0.0;
            let mut c1 = 0.0;
            let mut s2 = 0.0;
            let mut c2 = 0.0;
            let g = |r: usize, c: usize| pred.get(r, c).unwrap();
            for r in 0..16 {
                for c in 0..16 {
                    if r + 1 < 16 && c + 1 < 16 {
                        s1 += (g(r, c + 1) - g(r, c)).abs() + (g(r + 1, c) - g(r, c)).abs();
                        c1 += 1.0;
                    }
                    if r >= 1 && r + 1 < 16 && c >= 1 && c + 1 < 16 {
                        s2 += (g(r - 1, c) + g(r + 1, c) + g(r, c - 1) + g(r, c + 1) - 4.0 * g(r, c)).abs();
                        c2 += 1.0;
                    }
                }
            }
            assert_relative_eq!(loss_smooth(&pred), s1 / c1 + s2 / c2, epsilon = 1e-12);
        }
    }

    #[test]
    fn smooth_loss_constant_and_ramp() {
        let flat = DepthMap::constant(12, 12, 5.0, DepthKind::PlaneDepth);
        assert_eq!(loss_smooth(&flat), 0.0);
        let ramp = DepthMap::from_grid(
            Grid::from_vec(12, 12, (0..144).map(|i| 5.0 + (i % 12) as f64 * 0.05).collect()),
            DepthKind::PlaneDepth,
        );
        let (t, _) = smooth_term(&ramp, false);
        assert_relative_eq!(t, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn photometric_identity_is_zero() {
        let img = smooth_image(16, 16, 4);
        let pred = DepthMap::constant(16, 16, 9.0, DepthKind::PlaneDepth);
        let neighbors = vec![(img.clone(), Transform::identity())];
        let v = loss_photometric(&pred, &img, &neighbors, &k16(), 0.85).unwrap();
        assert!(v.abs() < 1e-9, "identity warp loss is {v}");
    }

    #[test]
    fn photometric_mean_over_neighbors() {
        let img = smooth_image(16, 16, 5);
        let pred = DepthMap::constant(16, 16, 9.0, DepthKind::PlaneDepth);
        let k = k16();
        let t1 = Transform::from_translation(Vector3::new(0.4, 0.0, 0.0));
        let t2 = Transform::from_translation(Vector3::new(0.0, 0.3, 0.0));
        let t3 = Transform::new(
            UnitQuaternion::from_scaled_axis(Vector3::z() * 0.02),
            Vector3::new(-0.2, 0.1, 0.0),
        );
        let n1 = (smooth_image(16, 16, 6), t1);
        let n2 = (smooth_image(16, 16, 7), t2);
        let n3 = (smooth_image(16, 16, 8), t3);
        let all = vec![n1.clone(), n2.clone(), n3.clone()];
        let combined = loss_photometric(&pred, &img, &all, &k, 0.85).unwrap();
        let singles: f64 = [n1, n2, n3]
            .into_iter()
            .map(|n| loss_photometric(&pred, &img, &[n], &k, 0.85).unwrap())
            .sum::<f64>()
            / 3.0;
        assert_relative_eq!(combined, singles, epsilon = 1e-12);
    }

    #[test]
    fn photometric_prefers_correct_depth_on_rendered_stereo() {
        use crate::terrain::{build_terrain, render_frame, TerrainSpec};
        let spec = TerrainSpec { texture_scale: 1.5, ..TerrainSpec::flat(40.0) };
        let terrain = build_terrain(&spec, 31).unwrap();
        let k = CameraIntrinsics::centred(96.0, 64, 64).unwrap();
        let nadir = UnitQuaternion::from_scaled_axis(Vector3::x() * std::f64::consts::PI);
        let left_pose = Transform::new(nadir, Vector3::new(0.0, 0.0, 10.0));
        let right_pose = Transform::new(nadir, Vector3::new(0.4, 0.0, 10.0));
        let left = render_frame(&terrain, &left_pose, &k).unwrap();
        let right = render_frame(&terrain, &right_pose, &k).unwrap();
        let right_from_left = right_pose.inverse().compose(&left_pose);
        let neighbors = vec![(right.image, right_from_left)];
        let good = loss_photometric(&left.true_depth, &left.image, &neighbors, &k, 0.85).unwrap();
        let scaled = DepthMap::from_grid(left.true_depth.raw().map(|d| d * 1.5), DepthKind::PlaneDepth);
        let bad = loss_photometric(&scaled, &left.image, &neighbors, &k, 0.85).unwrap();
        assert!(good < bad, "good {good} should beat scaled depth {bad}");
    }

    #[test]
    fn no_neighbors_is_an_error() {
        let img = smooth_image(8, 8, 1);
        let pred = DepthMap::constant(8, 8, 5.0, DepthKind::PlaneDepth);
        assert!(matches!(
            loss_photometric(&pred, &img, &[], &k16(), 0.85),
            Err(PredictorError::NoNeighbors)
        ));
    }

    #[test]
    fn warp_missing_image_entirely_is_degenerate() {
        let img = smooth_image(16, 16, 2);
        let pred = DepthMap::constant(16, 16, 1.0, DepthKind::PlaneDepth);
        let away = Transform::from_translation(Vector3::new(100.0, 0.0, 0.0));
        assert!(matches!(
            loss_photometric(&pred, &img, &[(img.clone(), away)], &k16(), 0.85),
            Err(PredictorError::DegenerateWarp)
        ));
    }

    /// Central finite differences around a base instance; the step must stay
    /// small enough not to flip warp validity or absolute-value signs.
    fn finite_difference(
        f: &mut dyn FnMut(&DepthMap) -> f64,
        base: &DepthMap,
        eps: f64,
    ) -> Grid<f64> {
        let mut g = Grid::filled(base.width(), base.height(), 0.0);
        for r in 0..base.height() {
            for c in 0..base.width() {
                let Some(d) = base.get(r, c) else { continue };
                let mut plus = base.clone();
                plus.set(r, c, Some(d + eps));
                let mut minus = base.clone();
                minus.set(r, c, Some(d - eps));
                *g.get_mut(r, c) = (f(&plus) - f(&minus)) / (2.0 * eps);
            }
        }
        g
    }

    fn assert_grad_close(analytic: &Grid<f64>, numeric: &Grid<f64>, label: &str) {
        let scale = numeric
            .as_slice()
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(1e-12);
        for (r, c, &a) in analytic.iter_cells() {
            let n = *numeric.get(r, c);
            let denom = n.abs().max(scale * 1e-3);
            assert!(
                (a - n).abs() / denom < 1e-4,
                "{label} gradient mismatch at ({r},{c}): analytic {a}, numeric {n}"
            );
        }
    }

    #[test]
    fn depth_and_ratio_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let pred = random_depth(16, 16, &mut rng);
            let sparse = random_sparse(16, 16, 0.3, &mut rng);
            if sparse.valid_count() == 0 {
                continue;
            }
            let (_, gd) = loss_depth_grad(&pred, &sparse).unwrap();
            let nd = finite_difference(&mut |p| loss_depth(p, &sparse).unwrap(), &pred, 1e-5);
            assert_grad_close(&gd, &nd, &format!("depth trial {trial}"));

            let (_, gr) = loss_ratio_grad(&pred, &sparse).unwrap();
            let nr = finite_difference(&mut |p| loss_ratio(p, &sparse).unwrap(), &pred, 1e-5);
            assert_grad_close(&gr, &nr, &format!("ratio trial {trial}"));
        }
    }

    #[test]
    fn smooth_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let pred = random_depth(16, 16, &mut rng);
            let (_, g) = loss_smooth_grad(&pred);
            let n = finite_difference(&mut |p| loss_smooth(p), &pred, 1e-6);
            assert_grad_close(&g, &n, &format!("smooth trial {trial}"));
        }
    }

    #[test]
    fn photometric_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = k16();
        for trial in 0..20 {
            let pred = random_depth(16, 16, &mut rng);
            let current = smooth_image(16, 16, trial);
            let neighbor = smooth_image(16, 16, trial + 50);
            let t = Transform::new(
                UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 0.01 * (trial as f64 - 10.0) / 10.0)),
                Vector3::new(0.3, -0.2, 0.05),
            );
            let neighbors = vec![(neighbor, t)];
            let (_, g) = loss_photometric_grad(&pred, &current, &neighbors, &k, 0.85).unwrap();
            let n = finite_difference(
                &mut |p| loss_photometric(p, &current, &neighbors, &k, 0.85).unwrap(),
                &pred,
                1e-5,
            );
            assert_grad_close(&g, &n, &format!("photometric trial {trial}"));
        }
    }
}
