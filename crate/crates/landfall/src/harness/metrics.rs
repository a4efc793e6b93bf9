//! Per-frame accuracy records and their density-bucket aggregation.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth_fusion::{rasterize_sparse, SparseDepth};
use crate::geometry::{backproject, CameraIntrinsics, Transform};
use crate::image_quality::evaluate_prediction;
use crate::predictor::{
    compute_metrics, predict, DepthMetrics, LossWeights, PredictContext, RefineOptions,
};
use crate::terrain::{build_terrain, render_frame, TerrainFeature, TerrainSpec};

use super::episode::nadir_pose;
use super::{derive_seed, HarnessError};

/// Canonical input-density groups reported by the summary table.
pub const DENSITY_BUCKETS: [f64; 5] = [0.0, 0.1, 0.3, 0.5, 1.0];

/// One completed frame: how much sparse input it had and how accurate the
/// result was.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Fraction of image pixels carrying a sparse return.
    pub density: f64,
    pub metrics: DepthMetrics,
}

/// Mean metrics of one density bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub density: f64,
    pub frames: usize,
    pub rmse_mm: f64,
    pub rel_mm: f64,
    pub delta: f64,
    /// Mean reconstruction SSIM over the frames that recorded one.
    pub ssim: Option<f64>,
}

fn nearest_bucket(density: f64) -> f64 {
    let mut best = DENSITY_BUCKETS[0];
    for &b in &DENSITY_BUCKETS[1..] {
        if (density - b).abs() < (density - best).abs() {
            best = b;
        }
    }
    best
}

/// Means of RMSE/REL/delta/SSIM per density bucket, ascending by density;
/// buckets with no records are omitted.
pub fn aggregate_metrics(records: &[FrameRecord]) -> Result<Vec<SummaryRow>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let mut rows = Vec::new();
    for &bucket in &DENSITY_BUCKETS {
        let members: Vec<&FrameRecord> =
            records.iter().filter(|r| nearest_bucket(r.density) == bucket).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let ssim_values: Vec<f64> =
            members.iter().filter_map(|r| r.metrics.ssim_recon).collect();
        rows.push(SummaryRow {
            density: bucket,
            frames: members.len(),
            rmse_mm: members.iter().map(|r| r.metrics.rmse_mm).sum::<f64>() / n,
            rel_mm: members.iter().map(|r| r.metrics.rel_mm).sum::<f64>() / n,
            delta: members.iter().map(|r| r.metrics.delta).sum::<f64>() / n,
            ssim: if ssim_values.is_empty() {
                None
            } else {
                Some(ssim_values.iter().sum::<f64>() / ssim_values.len() as f64)
            },
        });
    }
    Ok(rows)
}

/// Writes the summary as CSV with one row per density bucket.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["density", "frames", "rmse_mm", "rel_mm", "delta", "ssim"])?;
    for r in rows {
        w.write_record([
            format!("{}", r.density),
            format!("{}", r.frames),
            format!("{}", r.rmse_mm),
            format!("{}", r.rel_mm),
            format!("{}", r.delta),
            r.ssim.map_or_else(String::new, |s| format!("{s}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-frame records as CSV, one row per frame.
pub fn write_records_csv<W: Write>(records: &[FrameRecord], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["density", "rmse_mm", "rel_mm", "delta", "ssim_recon"])?;
    for r in records {
        w.write_record([
            format!("{}", r.density),
            format!("{}", r.metrics.rmse_mm),
            format!("{}", r.metrics.rel_mm),
            format!("{}", r.metrics.delta),
            r.metrics.ssim_recon.map_or_else(String::new, |s| format!("{s}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records written by [`write_records_csv`]; `path` only labels errors.
pub fn read_records_csv<R: std::io::Read>(
    reader: R,
    path: &std::path::Path,
) -> Result<Vec<FrameRecord>, HarnessError> {
    let schema = |row: usize, reason: String| HarnessError::Schema {
        path: path.to_path_buf(),
        row,
        reason,
    };
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    let expected = ["density", "rmse_mm", "rel_mm", "delta", "ssim_recon"];
    if header.iter().ne(expected) {
        return Err(schema(1, format!("expected columns {expected:?}, found {header:?}")));
    }
    let mut records = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| schema(i + 2, e.to_string()))?;
        let field = |j: usize| -> Result<f64, HarnessError> {
            row.get(j)
                .ok_or_else(|| schema(i + 2, format!("missing column {}", expected[j])))?
                .parse::<f64>()
                .map_err(|e| schema(i + 2, format!("{}: {e}", expected[j])))
        };
        let ssim_recon = match row.get(4) {
            None | Some("") => None,
            Some(_) => Some(field(4)?),
        };
        records.push(FrameRecord {
            density: field(0)?,
            metrics: DepthMetrics {
                rmse_mm: field(1)?,
                rel_mm: field(2)?,
                delta: field(3)?,
                ssim_recon,
            },
        });
    }
    Ok(records)
}

/// Samples a fraction of the truth map's known pixels as sparse input.
///
/// The pixel order is a seeded shuffle and the subset is its prefix, so for
/// a fixed seed a lower fraction is always a subset of a higher one.
pub fn sample_sparse_from(
    truth: &crate::grid::DepthMap,
    k: &CameraIntrinsics,
    fraction: f64,
    seed: u64,
) -> SparseDepth {
    let mut pixels: Vec<(usize, usize, f64)> = truth.iter_known().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pixels.shuffle(&mut rng);
    let keep = (fraction.clamp(0.0, 1.0) * pixels.len() as f64).ceil() as usize;
    let points: Vec<(f64, nalgebra::Vector3<f64>)> = pixels[..keep.min(pixels.len())]
        .iter()
        .map(|&(r, c, d)| {
            (0.0, backproject((c as f64, r as f64), d, k).expect("known pixel backprojects"))
        })
        .collect();
    rasterize_sparse(&points, k, 0.0)
}

/// Scene generator for the density study: relief that a constant prior
/// cannot explain, textured enough for the stereo check.
fn sweep_terrain(texture_seed: u64) -> TerrainSpec {
    TerrainSpec {
        extent: 60.0,
        features: vec![
            TerrainFeature::Plane { height: 0.0, slope_deg: 0.0, slope_azimuth_deg: 0.0 },
            TerrainFeature::Roughness { amplitude: 0.8, octaves: 3, base_wavelength: 6.0 },
        ],
        texture_seed,
        texture_scale: 0.3,
        texture_contrast: 0.3,
    }
}

#[derive(Debug, Clone)]
pub struct DensitySweepConfig {
    /// Scene template; its texture seed is replaced per scene.
    pub terrain: TerrainSpec,
    pub camera: CameraIntrinsics,
    pub stereo_baseline_m: f64,
    pub altitude_m: f64,
    pub weights: LossWeights,
    pub refine: RefineOptions,
    pub densities: Vec<f64>,
}

impl Default for DensitySweepConfig {
    fn default() -> Self {
        Self {
            terrain: sweep_terrain(0),
            camera: CameraIntrinsics::centred(96.0, 64, 64).expect("valid intrinsics"),
            stereo_baseline_m: 0.3,
            altitude_m: 10.0,
            weights: LossWeights::default(),
            refine: RefineOptions { max_iters: 60, ..RefineOptions::default() },
            densities: DENSITY_BUCKETS.to_vec(),
        }
    }
}

/// Renders one stereo scene per seed and completes it at every requested
/// density, sampling the sparse input from ground truth with nested subsets,
/// so more density never means less information.
pub fn density_sweep(
    config: &DensitySweepConfig,
    scene_seeds: &[u64],
) -> Result<Vec<FrameRecord>, HarnessError> {
    let k = config.camera;
    let right_in_left =
        Transform::from_translation(nalgebra::Vector3::new(config.stereo_baseline_m, 0.0, 0.0));
    let right_from_left = right_in_left.inverse();
    let mut records = Vec::with_capacity(scene_seeds.len() * config.densities.len());
    for &seed in scene_seeds {
        let spec = TerrainSpec { texture_seed: seed, ..config.terrain.clone() };
        let terrain = build_terrain(&spec, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5c, 0));
        let x = rand::Rng::gen_range(&mut rng, -3.0..3.0);
        let y = rand::Rng::gen_range(&mut rng, -3.0..3.0);
        let pose = nadir_pose(nalgebra::Vector3::new(x, y, config.altitude_m));
        let left = render_frame(&terrain, &pose, &k)?;
        let right = render_frame(&terrain, &pose.compose(&right_in_left), &k)?;
        let truth = &left.true_depth;

        let mut ctx = PredictContext::new(config.altitude_m);
        ctx.refine = config.refine;
        ctx.neighbors = vec![(right.image.clone(), right_from_left)];
        for &density in &config.densities {
            let sparse = sample_sparse_from(truth, &k, density, derive_seed(seed, 0xde, 0));
            let pred = predict(
                Some(&left.image),
                (sparse.valid_count() > 0).then_some(&sparse),
                &ctx,
                &k,
                &config.weights,
            )?;
            let eval =
                evaluate_prediction(&left.image, &right.image, &pred, &sparse, &right_from_left, &k)?;
            let mut metrics = compute_metrics(&pred, truth, 1.25)?;
            metrics.ssim_recon = Some(eval.sim_pred);
            records.push(FrameRecord { density, metrics });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DepthKind, DepthMap};
    use approx::assert_relative_eq;

    fn record(density: f64, rmse: f64, rel: f64, delta: f64, ssim: Option<f64>) -> FrameRecord {
        FrameRecord {
            density,
            metrics: DepthMetrics { rmse_mm: rmse, rel_mm: rel, delta, ssim_recon: ssim },
        }
    }

    #[test]
    fn empty_records_are_rejected() {
        assert!(matches!(aggregate_metrics(&[]), Err(HarnessError::EmptyInput)));
    }

    #[test]
    fn single_record_summary_is_the_record() {
        let rows =
            aggregate_metrics(&[record(0.3, 850.0, 40.0, 0.92, Some(0.75))]).unwrap();
        assert_eq!(rows.len(), 1);
        let row = rows[0];
        assert_eq!(row.density, 0.3);
        assert_eq!(row.frames, 1);
        assert_eq!(row.rmse_mm, 850.0);
        assert_eq!(row.rel_mm, 40.0);
        assert_eq!(row.delta, 0.92);
        assert_eq!(row.ssim, Some(0.75));
    }

    #[test]
    fn hand_built_records_match_spreadsheet_means() {
        let records = [
            record(0.1, 1200.0, 55.0, 0.80, Some(0.70)),
            record(0.12, 1000.0, 45.0, 0.90, None),
            record(0.5, 900.0, 40.0, 0.92, Some(0.76)),
            record(0.48, 700.0, 30.0, 0.96, Some(0.78)),
            record(1.0, 100.0, 5.0, 1.0, Some(0.9)),
        ];
        let rows = aggregate_metrics(&records).unwrap();
        assert_eq!(rows.iter().map(|r| r.density).collect::<Vec<_>>(), vec![0.1, 0.5, 1.0]);
        let b01 = rows[0];
        assert_relative_eq!(b01.rmse_mm, 1100.0, epsilon = 1e-9);
        assert_relative_eq!(b01.rel_mm, 50.0, epsilon = 1e-9);
        assert_relative_eq!(b01.delta, 0.85, epsilon = 1e-9);
        // SSIM averages only over the frames that have one.
        assert_relative_eq!(b01.ssim.unwrap(), 0.70, epsilon = 1e-9);
        let b05 = rows[1];
        assert_relative_eq!(b05.rmse_mm, 800.0, epsilon = 1e-9);
        assert_relative_eq!(b05.ssim.unwrap(), 0.77, epsilon = 1e-9);
    }

    #[test]
    fn densities_group_to_the_nearest_bucket() {
        assert_eq!(nearest_bucket(0.04), 0.0);
        assert_eq!(nearest_bucket(0.12), 0.1);
        assert_eq!(nearest_bucket(0.21), 0.3);
        assert_eq!(nearest_bucket(0.74), 0.5);
        assert_eq!(nearest_bucket(0.9), 1.0);
    }

    #[test]
    fn csv_summary_has_header_and_rows() {
        let rows = aggregate_metrics(&[record(0.3, 850.0, 40.0, 0.92, None)]).unwrap();
        let mut out = Vec::new();
        write_summary_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "density,frames,rmse_mm,rel_mm,delta,ssim");
        assert!(lines.next().unwrap().starts_with("0.3,1,850"));
    }

    #[test]
    fn sparse_sampling_is_nested_and_sized() {
        let k = CameraIntrinsics::centred(16.0, 16, 16).unwrap();
        let truth = DepthMap::constant(16, 16, 8.0, DepthKind::PlaneDepth);
        let none = sample_sparse_from(&truth, &k, 0.0, 9);
        assert_eq!(none.valid_count(), 0);
        let full = sample_sparse_from(&truth, &k, 1.0, 9);
        assert_eq!(full.valid_count(), 256);
        let low = sample_sparse_from(&truth, &k, 0.1, 9);
        let high = sample_sparse_from(&truth, &k, 0.3, 9);
        assert_eq!(low.valid_count(), 26);
        assert_eq!(high.valid_count(), 77);
        for (r, c, _) in low.iter_valid() {
            assert!(high.get(r, c).is_some(), "({r},{c}) in the 0.1 draw but not the 0.3 draw");
        }
    }

    #[test]
    fn sweep_produces_a_record_per_scene_and_density() {
        let mut cfg = DensitySweepConfig::default();
        cfg.camera = CameraIntrinsics::centred(48.0, 32, 32).unwrap();
        cfg.refine.max_iters = 30;
        cfg.densities = vec![0.0, 0.3, 1.0];
        let records = density_sweep(&cfg, &[1, 2]).unwrap();
        assert_eq!(records.len(), 6);
        // Full density starts at the truth it was sampled from; refinement
        // may wander a little but not by relief scale.
        let mean = |d: f64| {
            let picked: Vec<f64> = records
                .iter()
                .filter(|r| r.density == d)
                .map(|r| r.metrics.rmse_mm)
                .collect();
            picked.iter().sum::<f64>() / picked.len() as f64
        };
        assert!(mean(1.0) < 150.0, "full-density rmse {}", mean(1.0));
        assert!(mean(1.0) < mean(0.0), "full {} vs prior-only {}", mean(1.0), mean(0.0));
    }

    #[test]
    fn record_csv_round_trips_including_missing_ssim() {
        let records = vec![
            FrameRecord {
                density: 0.1,
                metrics: DepthMetrics { rmse_mm: 52.5, rel_mm: 4.0, delta: 0.99, ssim_recon: None },
            },
            FrameRecord {
                density: 0.31,
                metrics: DepthMetrics {
                    rmse_mm: 38.0,
                    rel_mm: 3.25,
                    delta: 1.0,
                    ssim_recon: Some(0.875),
                },
            },
        ];
        let mut buf = Vec::new();
        write_records_csv(&records, &mut buf).unwrap();
        let back = read_records_csv(buf.as_slice(), std::path::Path::new("records.csv")).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn record_csv_reader_rejects_wrong_header() {
        let text = "density,rmse\n0.1,5\n";
        let err =
            read_records_csv(text.as_bytes(), std::path::Path::new("records.csv")).unwrap_err();
        assert!(err.to_string().contains("expected columns"), "{err}");
    }
}
