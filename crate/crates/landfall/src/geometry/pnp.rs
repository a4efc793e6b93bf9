//! Camera pose from 3D-2D correspondences.
//!
//! Two stages: a normalised direct linear transform gives an algebraic
//! initial pose, then Gauss-Newton on pixel reprojection error polishes it.
//! The camera is assumed calibrated ([`CameraIntrinsics`]), so the linear
//! stage works in normalised image coordinates.

use nalgebra::{DMatrix, Matrix3, Matrix6, SMatrix, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::camera::{project, CameraIntrinsics};
use super::transform::Transform;
use super::GeometryError;

/// Gauss-Newton iteration cap.
const MAX_REFINE_ITERS: usize = 50;
/// Stop once the six-dof update step norm drops below this.
const STEP_TOLERANCE: f64 = 1e-10;
/// Relative singular-value floor below which the DLT system counts as rank
/// deficient (collinear or otherwise degenerate correspondences).
const RANK_TOLERANCE: f64 = 1e-9;

/// One observed 3D point and the pixel it projected to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world_point: Vector3<f64>,
    pub pixel: (f64, f64),
}

/// Result of [`solve_pnp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PnpSolution {
    /// Maps world-frame points into the camera frame.
    pub camera_from_world: Transform,
    /// Mean Euclidean pixel error over all correspondences at the solution.
    pub mean_reprojection_error: f64,
    /// Gauss-Newton iterations actually run.
    pub iterations: usize,
}

/// Estimates the camera-from-world pose from at least six correspondences.
///
/// Collinear or coplanar point sets make the linear system rank deficient
/// and are reported as [`GeometryError::DegenerateGeometry`] rather than
/// returning a garbage pose.
pub fn solve_pnp(
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<PnpSolution, GeometryError> {
    if correspondences.len() < 6 {
        return Err(GeometryError::TooFewCorrespondences {
            needed: 6,
            got: correspondences.len(),
        });
    }
    for c in correspondences {
        let finite = c.world_point.iter().all(|v| v.is_finite())
            && c.pixel.0.is_finite()
            && c.pixel.1.is_finite();
        if !finite {
            return Err(GeometryError::NonFinite { what: "correspondence" });
        }
    }

    let initial = linear_stage(correspondences, k)?;
    let (pose, iterations) = refine(initial, correspondences, k);
    let mean_err = mean_reprojection_error(&pose, correspondences, k);
    if !mean_err.is_finite() {
        return Err(GeometryError::DegenerateGeometry);
    }
    Ok(PnpSolution {
        camera_from_world: pose,
        mean_reprojection_error: mean_err,
        iterations,
    })
}

/// Normalised DLT. World points are shifted to their centroid and scaled to
/// RMS length sqrt(3); pixels are converted to normalised image coordinates.
fn linear_stage(
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<Transform, GeometryError> {
    let n = correspondences.len();
    let centroid: Vector3<f64> =
        correspondences.iter().map(|c| c.world_point).sum::<Vector3<f64>>() / n as f64;
    let rms = (correspondences
        .iter()
        .map(|c| (c.world_point - centroid).norm_squared())
        .sum::<f64>()
        / n as f64)
        .sqrt();
    if rms < 1e-12 {
        return Err(GeometryError::DegenerateGeometry);
    }
    let scale = rms / 3f64.sqrt();

    let (cx, cy) = k.principal;
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, c) in correspondences.iter().enumerate() {
        let p = (c.world_point - centroid) / scale;
        let x = (c.pixel.0 - cx) / k.focal;
        let y = (c.pixel.1 - cy) / k.focal;
        let r0 = 2 * i;
        let row_x = [p.x, p.y, p.z, 1.0, 0.0, 0.0, 0.0, 0.0, -x * p.x, -x * p.y, -x * p.z, -x];
        let row_y = [0.0, 0.0, 0.0, 0.0, p.x, p.y, p.z, 1.0, -y * p.x, -y * p.y, -y * p.z, -y];
        for j in 0..12 {
            a[(r0, j)] = row_x[j];
            a[(r0 + 1, j)] = row_y[j];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    let sigma = &svd.singular_values;
    // Unique null direction requires rank 11: the second-smallest singular
    // value must be comfortably non-zero.
    if sigma[10] <= RANK_TOLERANCE * sigma[0] {
        return Err(GeometryError::DegenerateGeometry);
    }
    let p_vec = v_t.row(11);

    let mut m = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            m[(r, c)] = p_vec[4 * r + c];
        }
    }
    let mut p4 = Vector3::new(p_vec[3], p_vec[7], p_vec[11]);
    if m.determinant() < 0.0 {
        m = -m;
        p4 = -p4;
    }

    let m_svd = m.svd(true, true);
    let u = m_svd.u.expect("3x3 svd u");
    let v_t3 = m_svd.v_t.expect("3x3 svd v_t");
    let s = m_svd.singular_values;
    if s[2] <= 1e-9 * s[0] {
        return Err(GeometryError::DegenerateGeometry);
    }
    let projective_scale = (s[0] * s[1] * s[2]).cbrt();
    let rot_mat = u * v_t3;
    let rotation = UnitQuaternion::from_matrix(&rot_mat);
    let t_norm = p4 / projective_scale;

    // Undo the world normalisation: p_cam = R*(X - centroid)/scale + t_norm,
    // rescaled by the projective freedom back to metric units.
    let translation = t_norm * scale - rotation * centroid;
    Ok(Transform::new(rotation, translation))
}

/// Gauss-Newton over (rotation, translation) minimising pixel reprojection
/// error, with the rotation updated on the left by an exponential step.
fn refine(
    initial: Transform,
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
) -> (Transform, usize) {
    let mut pose = initial;
    let mut best = initial;
    let mut best_err = mean_reprojection_error(&initial, correspondences, k);
    let mut iterations = 0;

    for _ in 0..MAX_REFINE_ITERS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        let mut usable = 0usize;
        for c in correspondences {
            let p_cam = pose.apply(&c.world_point);
            if p_cam.z <= 1e-9 {
                continue;
            }
            usable += 1;
            let (u, v) = (
                k.focal * p_cam.x / p_cam.z + k.principal.0,
                k.focal * p_cam.y / p_cam.z + k.principal.1,
            );
            let residual = Vector2::new(u - c.pixel.0, v - c.pixel.1);
            let z_inv = 1.0 / p_cam.z;
            // d(pixel)/d(camera point)
            let dpi = SMatrix::<f64, 2, 3>::new(
                k.focal * z_inv,
                0.0,
                -k.focal * p_cam.x * z_inv * z_inv,
                0.0,
                k.focal * z_inv,
                -k.focal * p_cam.y * z_inv * z_inv,
            );
            // Left perturbation: p_cam = exp(w)*(R x) + t + dt, so the point
            // moves by w x (R x) = -[Rx]_x w.
            let rx = pose.rotation() * c.world_point;
            let skew = Matrix3::new(0.0, -rx.z, rx.y, rx.z, 0.0, -rx.x, -rx.y, rx.x, 0.0);
            let mut jac = SMatrix::<f64, 2, 6>::zeros();
            jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-dpi * skew));
            jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpi);
            jtj += jac.transpose() * jac;
            jtr += jac.transpose() * residual;
        }
        if usable < 6 {
            break;
        }
        let Some(step) = jtj.lu().solve(&(-jtr)) else {
            break;
        };
        iterations += 1;
        let w = Vector3::new(step[0], step[1], step[2]);
        let dt = Vector3::new(step[3], step[4], step[5]);
        let rotation = UnitQuaternion::from_scaled_axis(w) * pose.rotation();
        pose = Transform::new(
            UnitQuaternion::new_normalize(rotation.into_inner()),
            pose.translation() + dt,
        );
        let err = mean_reprojection_error(&pose, correspondences, k);
        if err < best_err {
            best_err = err;
            best = pose;
        }
        if step.norm() < STEP_TOLERANCE {
            break;
        }
    }
    (best, iterations)
}

fn mean_reprojection_error(
    pose: &Transform,
    correspondences: &[Correspondence],
    k: &CameraIntrinsics,
) -> f64 {
    let mut total = 0.0;
    for c in correspondences {
        let p_cam = pose.apply(&c.world_point);
        match project(&p_cam, k) {
            Ok((u, v)) => {
                total += ((u - c.pixel.0).powi(2) + (v - c.pixel.1).powi(2)).sqrt();
            }
            Err(_) => return f64::INFINITY,
        }
    }
    total / correspondences.len() as f64
}
