//! Procedural terrain with analytic ground truth.
//!
//! A [`Terrain`] is a heightfield `z = h(x, y)` over a square domain centred
//! on the origin, world z up, plus an albedo texture. Feature primitives
//! compose additively in declaration order; flat discs override the
//! accumulated height so a guaranteed landing pad stays flat no matter what
//! roughness was declared before or after it. Everything is deterministic
//! per (spec, seed) pair.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Transform};
use crate::grid::{DepthKind, DepthMap, GrayImage};

/// Ray-march step along the ray, metres.
const MARCH_STEP: f64 = 0.05;
/// Bisection iterations after a sign change; interval shrinks to
/// `MARCH_STEP / 2^30`, far below the 1e-4 m accuracy target.
const BISECT_ITERS: usize = 30;
/// Spacing of probe samples when the safety oracle scans a disc, metres.
const ORACLE_GRID_STEP: f64 = 0.1;
/// Baseline of the central second difference used for the oracle's
/// roughness angle, metres.
const ROUGHNESS_PROBE: f64 = 0.1;
/// Step for the oracle's finite-difference slope estimate, metres.
const SLOPE_PROBE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("invalid terrain spec: {reason}")]
    BadSpec { reason: String },
    #[error("camera at z = {camera_z} is below terrain height {terrain_z}")]
    CameraBelowTerrain { camera_z: f64, terrain_z: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One heightfield primitive. Heights in metres, angles in degrees,
/// positions in world (x, y).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TerrainFeature {
    /// Inclined base plane through `height` at the origin.
    Plane {
        height: f64,
        #[serde(default)]
        slope_deg: f64,
        #[serde(default)]
        slope_azimuth_deg: f64,
    },
    /// Square plateau of side `size` centred at `position`.
    Step { position: [f64; 2], size: f64, height: f64 },
    /// Rectangular obstacle, axis-aligned, `size = [sx, sy]`.
    Box { center: [f64; 2], size: [f64; 2], height: f64 },
    /// Flat circular patch that overrides the accumulated height inside it.
    FlatDisc { center: [f64; 2], radius: f64, height: f64 },
    /// Octaved value noise; `amplitude` is the peak summed excursion.
    Roughness {
        amplitude: f64,
        #[serde(default = "default_octaves")]
        octaves: u32,
        #[serde(default = "default_base_wavelength")]
        base_wavelength: f64,
    },
}

fn default_octaves() -> u32 {
    3
}

fn default_base_wavelength() -> f64 {
    2.0
}

fn default_texture_scale() -> f64 {
    0.3
}

fn default_texture_contrast() -> f64 {
    0.25
}

/// Declarative terrain description, JSON-serialisable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TerrainSpec {
    /// Side of the square domain, metres.
    pub extent: f64,
    pub features: Vec<TerrainFeature>,
    #[serde(default)]
    pub texture_seed: u64,
    /// Base wavelength of the albedo texture, metres.
    #[serde(default = "default_texture_scale")]
    pub texture_scale: f64,
    /// Target RMS contrast of the albedo texture around its 0.5 mean.
    #[serde(default = "default_texture_contrast")]
    pub texture_contrast: f64,
}

impl TerrainSpec {
    /// Flat plane at height zero, the simplest valid spec.
    pub fn flat(extent: f64) -> Self {
        Self {
            extent,
            features: vec![TerrainFeature::Plane {
                height: 0.0,
                slope_deg: 0.0,
                slope_azimuth_deg: 0.0,
            }],
            texture_seed: 0,
            texture_scale: default_texture_scale(),
            texture_contrast: default_texture_contrast(),
        }
    }

    fn validate(&self) -> Result<(), TerrainError> {
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return Err(TerrainError::BadSpec {
                reason: format!("extent must be positive, got {}", self.extent),
            });
        }
        if !(self.texture_scale.is_finite() && self.texture_scale > 0.0) {
            return Err(TerrainError::BadSpec {
                reason: "texture_scale must be positive".into(),
            });
        }
        if !(self.texture_contrast.is_finite() && self.texture_contrast >= 0.0) {
            return Err(TerrainError::BadSpec {
                reason: "texture_contrast must be non-negative".into(),
            });
        }
        for f in &self.features {
            match f {
                TerrainFeature::Plane { height, slope_deg, .. } => {
                    if !height.is_finite() || !slope_deg.is_finite() || slope_deg.abs() >= 90.0 {
                        return Err(TerrainError::BadSpec {
                            reason: "plane height/slope out of range".into(),
                        });
                    }
                }
                TerrainFeature::Step { size, height, .. } => {
                    if !(size.is_finite() && *size > 0.0) || !height.is_finite() {
                        return Err(TerrainError::BadSpec { reason: "bad step".into() });
                    }
                }
                TerrainFeature::Box { size, height, .. } => {
                    if !(size[0] > 0.0 && size[1] > 0.0) || !height.is_finite() {
                        return Err(TerrainError::BadSpec { reason: "bad box".into() });
                    }
                }
                TerrainFeature::FlatDisc { radius, height, .. } => {
                    if !(radius.is_finite() && *radius > 0.0) || !height.is_finite() {
                        return Err(TerrainError::BadSpec { reason: "bad disc".into() });
                    }
                }
                TerrainFeature::Roughness { amplitude, octaves, base_wavelength } => {
                    if !(amplitude.is_finite() && *amplitude >= 0.0)
                        || *octaves == 0
                        || !(base_wavelength.is_finite() && *base_wavelength > 0.0)
                    {
                        return Err(TerrainError::BadSpec { reason: "bad roughness".into() });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Built terrain: immutable, cheap to query, deterministic.
#[derive(Debug, Clone)]
pub struct Terrain {
    extent: f64,
    features: Vec<TerrainFeature>,
    roughness_seed: u64,
    texture_seed: u64,
    texture_scale: f64,
    texture_gain: f64,
    height_lo: f64,
    height_hi: f64,
}

/// Intersection of a ray with the terrain surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Distance along the (unit) ray direction, metres.
    pub range: f64,
    /// World-frame intersection point.
    pub point: Vector3<f64>,
}

/// Builds a terrain from its spec. `seed` drives the roughness noise;
/// the albedo texture follows `spec.texture_seed` so geometry and texture
/// can be varied independently.
pub fn build_terrain(spec: &TerrainSpec, seed: u64) -> Result<Terrain, TerrainError> {
    spec.validate()?;
    let (height_lo, height_hi) = height_bounds(spec);
    let mut terrain = Terrain {
        extent: spec.extent,
        features: spec.features.clone(),
        roughness_seed: mix64(seed ^ 0x7465_7272_6169_6e00),
        texture_seed: mix64(spec.texture_seed ^ 0x616c_6265_646f_0000),
        texture_scale: spec.texture_scale,
        texture_gain: 0.0,
        height_lo,
        height_hi,
    };
    let rms = terrain.texture_rms_estimate();
    terrain.texture_gain = if rms > 1e-9 { spec.texture_contrast / rms } else { 0.0 };
    Ok(terrain)
}

fn height_bounds(spec: &TerrainSpec) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    let reach = spec.extent * std::f64::consts::FRAC_1_SQRT_2;
    for f in &spec.features {
        match f {
            TerrainFeature::Plane { height, slope_deg, .. } => {
                let swing = slope_deg.to_radians().tan().abs() * reach;
                lo += height - swing;
                hi += height + swing;
            }
            TerrainFeature::Step { height, .. } | TerrainFeature::Box { height, .. } => {
                lo += height.min(0.0);
                hi += height.max(0.0);
            }
            TerrainFeature::Roughness { amplitude, .. } => {
                lo -= amplitude;
                hi += amplitude;
            }
            TerrainFeature::FlatDisc { .. } => {}
        }
    }
    for f in &spec.features {
        if let TerrainFeature::FlatDisc { height, .. } = f {
            lo = lo.min(*height);
            hi = hi.max(*height);
        }
    }
    (lo, hi)
}

impl Terrain {
    /// Side of the square domain, metres.
    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Conservative `(min, max)` height over the whole domain.
    pub fn height_bounds(&self) -> (f64, f64) {
        (self.height_lo, self.height_hi)
    }

    /// True when `(x, y)` lies inside the square domain.
    pub fn in_domain(&self, x: f64, y: f64) -> bool {
        let half = self.extent / 2.0;
        x.abs() <= half && y.abs() <= half
    }

    /// Surface height at `(x, y)`, metres.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let mut h = 0.0;
        let mut disc: Option<f64> = None;
        for f in &self.features {
            match f {
                TerrainFeature::Plane { height, slope_deg, slope_azimuth_deg } => {
                    let a = slope_azimuth_deg.to_radians();
                    h += height + slope_deg.to_radians().tan() * (x * a.cos() + y * a.sin());
                }
                TerrainFeature::Step { position, size, height } => {
                    let half = size / 2.0;
                    if (x - position[0]).abs() <= half && (y - position[1]).abs() <= half {
                        h += height;
                    }
                }
                TerrainFeature::Box { center, size, height } => {
                    if (x - center[0]).abs() <= size[0] / 2.0 && (y - center[1]).abs() <= size[1] / 2.0 {
                        h += height;
                    }
                }
                TerrainFeature::FlatDisc { center, radius, height } => {
                    let dx = x - center[0];
                    let dy = y - center[1];
                    if dx * dx + dy * dy <= radius * radius {
                        disc = Some(*height);
                    }
                }
                TerrainFeature::Roughness { amplitude, octaves, base_wavelength } => {
                    h += fractal_noise(x, y, *amplitude, *octaves, *base_wavelength, self.roughness_seed);
                }
            }
        }
        disc.unwrap_or(h)
    }

    /// Albedo in `[0, 1]` at `(x, y)`; mean 0.5, RMS contrast per spec.
    pub fn albedo_at(&self, x: f64, y: f64) -> f64 {
        let raw = fractal_noise(x, y, 1.0, 3, self.texture_scale, self.texture_seed);
        (0.5 + self.texture_gain * raw).clamp(0.02, 0.98)
    }

    fn texture_rms_estimate(&self) -> f64 {
        let n = 64;
        let mut sum_sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = (i as f64 / (n - 1) as f64 - 0.5) * self.extent;
                let y = (j as f64 / (n - 1) as f64 - 0.5) * self.extent;
                let v = fractal_noise(x, y, 1.0, 3, self.texture_scale, self.texture_seed);
                sum_sq += v * v;
            }
        }
        (sum_sq / (n * n) as f64).sqrt()
    }

    /// Outward unit surface normal by central differences.
    pub fn normal_at(&self, x: f64, y: f64) -> Vector3<f64> {
        let e = SLOPE_PROBE;
        let dzdx = (self.height_at(x + e, y) - self.height_at(x - e, y)) / (2.0 * e);
        let dzdy = (self.height_at(x, y + e) - self.height_at(x, y - e)) / (2.0 * e);
        Vector3::new(-dzdx, -dzdy, 1.0).normalize()
    }

    /// Local slope angle in radians, from the finite-difference gradient.
    pub fn slope_angle_at(&self, x: f64, y: f64) -> f64 {
        let e = SLOPE_PROBE;
        let dzdx = (self.height_at(x + e, y) - self.height_at(x - e, y)) / (2.0 * e);
        let dzdy = (self.height_at(x, y + e) - self.height_at(x, y - e)) / (2.0 * e);
        dzdx.hypot(dzdy).atan()
    }

    /// Local roughness angle in radians: the worst chord-deviation of a
    /// central second difference over a fixed probe baseline, in four
    /// directions. Zero on any plane regardless of its slope.
    pub fn roughness_angle_at(&self, x: f64, y: f64) -> f64 {
        let l = ROUGHNESS_PROBE;
        let dirs = [
            (1.0, 0.0),
            (0.0, 1.0),
            (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
            (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
        ];
        let mut worst = 0.0f64;
        let centre = 2.0 * self.height_at(x, y);
        for (dx, dy) in dirs {
            let second = self.height_at(x + l * dx, y + l * dy) + self.height_at(x - l * dx, y - l * dy) - centre;
            worst = worst.max((second.abs() / (2.0 * l)).atan());
        }
        worst
    }

    /// First terrain intersection along `origin + s * dir` for unit `dir`,
    /// or `None` within `max_range`. Marching starts where the ray first
    /// dips under the terrain's height ceiling and stops once it leaves the
    /// domain or can no longer descend to terrain.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<RayHit> {
        let above = |s: f64| -> f64 {
            let p = origin + dir * s;
            p.z - self.height_at(p.x, p.y)
        };

        let mut s = 0.0;
        if dir.z < 0.0 {
            let to_ceiling = (origin.z - self.height_hi) / -dir.z;
            if to_ceiling > 0.0 {
                s = to_ceiling;
            }
        } else if origin.z >= self.height_hi {
            return None;
        }
        if s >= max_range {
            return None;
        }

        let mut prev_s = s;
        let mut prev_f = above(s);
        if prev_f <= 0.0 {
            // Started at or below the surface; count it as an immediate hit.
            return Some(RayHit {
                range: s,
                point: origin + dir * s,
            });
        }
        loop {
            let next_s = (prev_s + MARCH_STEP).min(max_range);
            let p = origin + dir * next_s;
            if !self.in_domain(p.x, p.y) {
                return None;
            }
            if dir.z >= 0.0 && p.z > self.height_hi {
                return None;
            }
            let f = above(next_s);
            if f <= 0.0 {
                let (mut lo, mut hi) = (prev_s, next_s);
                for _ in 0..BISECT_ITERS {
                    let mid = 0.5 * (lo + hi);
                    if above(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let range = 0.5 * (lo + hi);
                return Some(RayHit {
                    range,
                    point: origin + dir * range,
                });
            }
            if next_s >= max_range {
                return None;
            }
            prev_s = next_s;
            prev_f = f;
            let _ = prev_f;
        }
    }
}

/// Camera view of a terrain: image, true depth, and the pose that made them.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub image: GrayImage,
    /// Plane depth (camera-frame z), unknown where no terrain was hit.
    pub true_depth: DepthMap,
    pub camera_pose: Transform,
    pub timestamp: f64,
}

/// Direction the fixed scene light shines from, pointing toward the light.
const LIGHT_TOWARD: Vector3<f64> = Vector3::new(0.25, 0.15, 0.95);

/// Renders the terrain from a camera pose (camera-to-world transform,
/// camera +z looking through the image). Intensity is albedo times a
/// Lambertian term for a fixed directional light plus a small ambient
/// floor. The frame timestamp is left at zero for the caller to stamp.
pub fn render_frame(
    terrain: &Terrain,
    camera_pose: &Transform,
    k: &CameraIntrinsics,
) -> Result<RenderedFrame, TerrainError> {
    let origin = camera_pose.translation();
    if terrain.in_domain(origin.x, origin.y) {
        let ground = terrain.height_at(origin.x, origin.y);
        if origin.z <= ground {
            return Err(TerrainError::CameraBelowTerrain {
                camera_z: origin.z,
                terrain_z: ground,
            });
        }
    }
    let light = LIGHT_TOWARD.normalize();
    let max_range = (origin.z - terrain.height_bounds().0).abs() * 4.0 + terrain.extent();

    let mut image = GrayImage::filled(k.width, k.height, 0.0);
    let mut depth = DepthMap::unknown(k.width, k.height, DepthKind::PlaneDepth);
    for row in 0..k.height {
        for col in 0..k.width {
            let dir_cam = k.ray((col as f64, row as f64));
            let dir_world = camera_pose.apply_direction(&dir_cam);
            if let Some(hit) = terrain.raycast(&origin, &dir_world, max_range) {
                depth.set(row, col, Some(hit.range * dir_cam.z));
                let n = terrain.normal_at(hit.point.x, hit.point.y);
                let lambert = n.dot(&light).max(0.0);
                let shade = 0.25 + 0.75 * lambert;
                *image.get_mut(row, col) = terrain.albedo_at(hit.point.x, hit.point.y) * shade;
            }
        }
    }
    Ok(RenderedFrame {
        image,
        true_depth: depth,
        camera_pose: *camera_pose,
        timestamp: 0.0,
    })
}

/// Ground-truth landability predicate, independent of the perception
/// pipeline: a point is safe when the whole disc of `min_radius` around it
/// stays inside the domain with slope below `t_inc_deg` and roughness angle
/// below `t_tur_deg` at every probe sample.
#[derive(Debug, Clone)]
pub struct SafetyOracle<'a> {
    terrain: &'a Terrain,
    t_inc: f64,
    t_tur: f64,
    min_radius: f64,
}

pub fn safety_oracle<'a>(
    terrain: &'a Terrain,
    t_inc_deg: f64,
    t_tur_deg: f64,
    min_radius: f64,
) -> SafetyOracle<'a> {
    assert!(t_inc_deg > 0.0 && t_tur_deg > 0.0 && min_radius > 0.0, "thresholds must be positive");
    SafetyOracle {
        terrain,
        t_inc: t_inc_deg.to_radians(),
        t_tur: t_tur_deg.to_radians(),
        min_radius,
    }
}

impl SafetyOracle<'_> {
    pub fn is_safe(&self, x: f64, y: f64) -> bool {
        let half = self.terrain.extent() / 2.0;
        let r = self.min_radius;
        if x - r < -half || x + r > half || y - r < -half || y + r > half {
            return false;
        }
        let steps = (r / ORACLE_GRID_STEP).ceil() as i64;
        for i in -steps..=steps {
            for j in -steps..=steps {
                let dx = i as f64 * ORACLE_GRID_STEP;
                let dy = j as f64 * ORACLE_GRID_STEP;
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (px, py) = (x + dx, y + dy);
                if self.terrain.slope_angle_at(px, py) >= self.t_inc {
                    return false;
                }
                if self.terrain.roughness_angle_at(px, py) >= self.t_tur {
                    return false;
                }
            }
        }
        true
    }
}

/// 64-bit finaliser used for all lattice hashing; splittable and
/// platform-independent.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Deterministic lattice value in `[-1, 1]`.
fn lattice_value(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = mix64(seed ^ mix64((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / ((1u64 << 53) as f64) * 2.0 - 1.0
}

/// Quintic fade, C2 at lattice lines.
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smooth value noise in roughly `[-1, 1]` with unit wavelength.
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let ix = x.floor();
    let iy = y.floor();
    let fx = fade(x - ix);
    let fy = fade(y - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = lattice_value(ix, iy, seed);
    let v10 = lattice_value(ix + 1, iy, seed);
    let v01 = lattice_value(ix, iy + 1, seed);
    let v11 = lattice_value(ix + 1, iy + 1, seed);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

/// Sum of value-noise octaves. Octave `o` has wavelength
/// `base_wavelength / 2^o`; amplitudes halve per octave and are normalised
/// so the worst-case summed excursion is `amplitude`.
fn fractal_noise(x: f64, y: f64, amplitude: f64, octaves: u32, base_wavelength: f64, seed: u64) -> f64 {
    if amplitude == 0.0 {
        return 0.0;
    }
    let norm: f64 = (0..octaves).map(|o| 0.5f64.powi(o as i32)).sum();
    let mut total = 0.0;
    for o in 0..octaves {
        let freq = 2f64.powi(o as i32) / base_wavelength;
        let amp = 0.5f64.powi(o as i32) / norm;
        total += amp * value_noise(x * freq, y * freq, seed.wrapping_add(mix64(o as u64 + 1)));
    }
    amplitude * total
}
