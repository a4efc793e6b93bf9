//! Motion compensation and sparse-depth rasterization.
//!
//! LiDAR points accumulate over time while the vehicle moves, so every point
//! must be carried from the lidar frame at its measurement time into the
//! camera frame at the image timestamp before it can act as sparse depth.
//! Frame chain, with `imu_track` holding IMU-to-world poses:
//!
//! `p_cam = T_cl * T_li * pose(t0)^-1 * pose(t1) * T_li^-1 * p_lidar(t1)`
//!
//! `T_li` maps IMU-frame points into the lidar frame and `T_cl` lidar-frame
//! points into the camera frame, both constant extrinsics.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, PoseTrack, Transform};
use crate::grid::{DepthKind, DepthMap, Grid, Mask};
use crate::lidar::{PointCloud, ScanPattern};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no valid pixels to interpolate from")]
    EmptySparse,
    #[error("mask dimensions {mask_w}x{mask_h} do not match depth {w}x{h}")]
    DimensionMismatch { mask_w: usize, mask_h: usize, w: usize, h: usize },
}

/// Sparse per-pixel plane depth plus the acquisition time of each valid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepth {
    depth: DepthMap,
    source_time: Grid<f64>,
}

impl SparseDepth {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            depth: DepthMap::unknown(width, height, DepthKind::PlaneDepth),
            source_time: Grid::filled(width, height, f64::NAN),
        }
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.depth.get(row, col)
    }

    /// Acquisition timestamp of a valid pixel.
    pub fn source_time(&self, row: usize, col: usize) -> Option<f64> {
        let t = *self.source_time.get(row, col);
        if t.is_nan() {
            None
        } else {
            Some(t)
        }
    }

    pub fn valid_count(&self) -> usize {
        self.depth.known_count()
    }

    /// Valid pixels over total pixels, in `[0, 1]`.
    pub fn density(&self) -> f64 {
        self.valid_count() as f64 / (self.width() * self.height()) as f64
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.depth.iter_known()
    }
}

/// Points re-expressed in one camera frame, accumulating across packets.
#[derive(Debug, Clone, Default)]
pub struct AccumulationBuffer {
    reference_time: f64,
    points_cam: Vec<(f64, Vector3<f64>)>,
}

impl AccumulationBuffer {
    /// Empty buffer anchored at the camera timestamp all points are
    /// expressed relative to.
    pub fn new(reference_time: f64) -> Self {
        Self {
            reference_time,
            points_cam: Vec::new(),
        }
    }

    pub fn reference_time(&self) -> f64 {
        self.reference_time
    }

    pub fn extend(&mut self, points: impl IntoIterator<Item = (f64, Vector3<f64>)>) {
        self.points_cam.extend(points);
    }

    pub fn points(&self) -> &[(f64, Vector3<f64>)] {
        &self.points_cam
    }

    pub fn len(&self) -> usize {
        self.points_cam.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_cam.is_empty()
    }

    /// Rasterizes the buffer against its own reference time, averaging
    /// returns that land on the same pixel.
    ///
    /// Motion compensation is exact here, so co-located returns differ only
    /// by range noise and integrating longer genuinely tightens each cell as
    /// the square root of its return count. The recorded acquisition time of
    /// a cell is the one closest to the reference time. Contrast with
    /// [`rasterize_sparse`], whose latest-wins policy is the right call for
    /// replayed logs where alignment cannot be trusted across the window.
    pub fn rasterize(&self, k: &CameraIntrinsics) -> SparseDepth {
        let mut sparse = SparseDepth::empty(k.width, k.height);
        let mut sums = Grid::filled(k.width, k.height, 0.0f64);
        let mut counts = Grid::filled(k.width, k.height, 0u32);
        for &(t, p) in &self.points_cam {
            if p.z <= 0.0 {
                continue;
            }
            let (cx, cy) = k.principal;
            let col = (k.focal * p.x / p.z + cx).round();
            let row = (k.focal * p.y / p.z + cy).round();
            if col < 0.0 || row < 0.0 || col > (k.width - 1) as f64 || row > (k.height - 1) as f64 {
                continue;
            }
            let (row, col) = (row as usize, col as usize);
            *sums.get_mut(row, col) += p.z;
            *counts.get_mut(row, col) += 1;
            let offset = (t - self.reference_time).abs();
            let keep = match sparse.source_time(row, col) {
                Some(existing) => offset < (existing - self.reference_time).abs(),
                None => true,
            };
            if keep {
                *sparse.source_time.get_mut(row, col) = t;
            }
        }
        for row in 0..k.height {
            for col in 0..k.width {
                let n = *counts.get(row, col);
                if n > 0 {
                    sparse.depth.set(row, col, Some(*sums.get(row, col) / n as f64));
                }
            }
        }
        sparse
    }
}

/// Motion-compensates a cloud into the camera frame at image time `t0`.
///
/// Each point measured at `t1` travels lidar(t1) -> IMU(t1) -> world ->
/// IMU(t0) -> lidar(t0) -> camera. Points that end up at or behind the
/// camera plane are dropped. Any timestamp outside the IMU track span is an
/// error.
pub fn align_points(
    cloud: &PointCloud,
    imu_track: &PoseTrack,
    lidar_from_imu: &Transform,
    camera_from_lidar: &Transform,
    t0: f64,
) -> Result<Vec<(f64, Vector3<f64>)>, FusionError> {
    let pose_t0 = imu_track.sample(t0)?;
    let imu_from_lidar = lidar_from_imu.inverse();
    let cam_from_imu_t0 = camera_from_lidar.compose(&lidar_from_imu.compose(&pose_t0.inverse()));
    let mut out = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let pose_t1 = imu_track.sample(p.timestamp)?;
        let world = pose_t1.apply(&imu_from_lidar.apply(&p.position));
        let cam = cam_from_imu_t0.apply(&world);
        if cam.z > 0.0 {
            out.push((p.timestamp, cam));
        }
    }
    Ok(out)
}

/// Projects camera-frame points to their nearest pixels.
///
/// Pixel collisions keep the point whose timestamp is closest to
/// `reference_time` (the image time). Points behind the camera or projecting
/// outside the image are ignored; stored values are plane depth (camera z).
pub fn rasterize_sparse(
    points_cam: &[(f64, Vector3<f64>)],
    k: &CameraIntrinsics,
    reference_time: f64,
) -> SparseDepth {
    let mut sparse = SparseDepth::empty(k.width, k.height);
    for &(t, p) in points_cam {
        if p.z <= 0.0 {
            continue;
        }
        let (cx, cy) = k.principal;
        let u = k.focal * p.x / p.z + cx;
        let v = k.focal * p.y / p.z + cy;
        let col = u.round();
        let row = v.round();
        if col < 0.0 || row < 0.0 || col > (k.width - 1) as f64 || row > (k.height - 1) as f64 {
            continue;
        }
        let (row, col) = (row as usize, col as usize);
        let offset = (t - reference_time).abs();
        let keep = match sparse.source_time(row, col) {
            Some(existing) => offset < (existing - reference_time).abs(),
            None => true,
        };
        if keep {
            sparse.depth.set(row, col, Some(p.z));
            *sparse.source_time.get_mut(row, col) = t;
        }
    }
    sparse
}

/// Pixels whose viewing ray falls inside the scanner's FOV cone.
///
/// The cone is taken about the lidar +z axis after rotating each pixel ray
/// into the lidar frame; the lever arm between the sensors is ignored, which
/// is the usual far-field approximation.
pub fn fov_mask(pattern: &ScanPattern, k: &CameraIntrinsics, camera_from_lidar: &Transform) -> Mask {
    let lidar_from_camera_rot = camera_from_lidar.rotation().inverse();
    let cos_fov = pattern.fov_half_angle_deg.to_radians().cos();
    let mut mask = Mask::filled(k.width, k.height, false);
    for row in 0..k.height {
        for col in 0..k.width {
            let ray_cam = k.ray((col as f64, row as f64));
            let ray_lidar = lidar_from_camera_rot * ray_cam;
            *mask.get_mut(row, col) = ray_lidar.z >= cos_fov;
        }
    }
    mask
}

/// Fills every in-mask pixel with the depth of its nearest valid pixel.
///
/// Distance is Euclidean in pixel units; exact ties go to the valid pixel
/// with the smaller row, then the smaller column. Pixels outside the mask
/// come back unknown. At least one valid pixel is required.
pub fn nn_interpolate(sparse: &SparseDepth, fov: &Mask) -> Result<DepthMap, FusionError> {
    let (w, h) = (sparse.width(), sparse.height());
    if fov.width() != w || fov.height() != h {
        return Err(FusionError::DimensionMismatch {
            mask_w: fov.width(),
            mask_h: fov.height(),
            w,
            h,
        });
    }
    if sparse.valid_count() == 0 {
        return Err(FusionError::EmptySparse);
    }

    let valid = sparse.depth().raw().map(|v| !v.is_nan());
    let dist2 = squared_distance_field(&valid);

    let mut out = DepthMap::unknown(w, h, DepthKind::PlaneDepth);
    for row in 0..h {
        for col in 0..w {
            if !*fov.get(row, col) {
                continue;
            }
            let d2 = dist2[row * w + col];
            let (sr, sc) = nearest_site(&valid, row, col, d2);
            out.set(row, col, sparse.get(sr, sc));
        }
    }
    Ok(out)
}

/// Exact integer squared Euclidean distance to the nearest `true` cell.
///
/// Column pass finds per-column vertical distances, then each row scans all
/// columns; O(H*W*W) but exact, which the tie-break rule depends on.
pub(crate) fn squared_distance_field(valid: &Mask) -> Vec<i64> {
    let (w, h) = (valid.width(), valid.height());
    const FAR: i64 = i64::MAX / 4;
    let mut vertical = vec![FAR; w * h];
    for col in 0..w {
        let mut last: Option<i64> = None;
        for row in 0..h {
            if *valid.get(row, col) {
                last = Some(row as i64);
            }
            if let Some(r) = last {
                vertical[row * w + col] = row as i64 - r;
            }
        }
        last = None;
        for row in (0..h).rev() {
            if *valid.get(row, col) {
                last = Some(row as i64);
            }
            if let Some(r) = last {
                vertical[row * w + col] = vertical[row * w + col].min(r - row as i64);
            }
        }
    }
    let mut dist2 = vec![FAR; w * h];
    for row in 0..h {
        for col in 0..w {
            let mut best = FAR;
            for src in 0..w {
                let g = vertical[row * w + src];
                if g >= FAR {
                    continue;
                }
                let dx = col as i64 - src as i64;
                best = best.min(dx * dx + g * g);
            }
            dist2[row * w + col] = best;
        }
    }
    dist2
}

/// Finds the valid cell at exactly `dist2` from `(row, col)` that is first
/// in (row, column) order, by walking candidate row offsets top to bottom.
fn nearest_site(valid: &Mask, row: usize, col: usize, dist2: i64) -> (usize, usize) {
    let max_dr = (dist2 as f64).sqrt() as i64 + 1;
    for dr in -max_dr..=max_dr {
        let rr = row as i64 + dr;
        if rr < 0 || rr >= valid.height() as i64 {
            continue;
        }
        let rem = dist2 - dr * dr;
        if rem < 0 {
            continue;
        }
        let dc = (rem as f64).sqrt().round() as i64;
        if dc * dc != rem {
            continue;
        }
        // Smaller column first when both offsets land on valid cells.
        for cc in [col as i64 - dc, col as i64 + dc] {
            if cc >= 0 && cc < valid.width() as i64 && *valid.get(rr as usize, cc as usize) {
                return (rr as usize, cc as usize);
            }
            if dc == 0 {
                break;
            }
        }
    }
    unreachable!("distance field disagrees with valid mask");
}
