//! Dense depth from one image and a handful of LiDAR returns.
//!
//! Renders a rough scene from 10 m up, samples ground-truth depth at several
//! sparsities, and completes each one with the variational predictor. The
//! table shows how accuracy responds to input density; the 0.0 row is the
//! image-plus-altitude-prior case with no returns at all.
//!
//!     cargo run --example depth_completion

use std::error::Error;

use nalgebra::Vector3;

use landfall::geometry::CameraIntrinsics;
use landfall::harness::{nadir_pose, sample_sparse_from};
use landfall::predictor::{compute_metrics, predict, LossWeights, PredictContext, RefineOptions};
use landfall::terrain::{build_terrain, render_frame, TerrainFeature, TerrainSpec};

fn main() -> Result<(), Box<dyn Error>> {
    let spec = TerrainSpec {
        extent: 40.0,
        features: vec![
            TerrainFeature::Plane { height: 0.0, slope_deg: 3.0, slope_azimuth_deg: 40.0 },
            TerrainFeature::Roughness { amplitude: 0.5, octaves: 3, base_wavelength: 6.0 },
            TerrainFeature::Box { center: [1.5, -1.0], size: [2.0, 1.5], height: 0.8 },
        ],
        texture_seed: 5,
        texture_scale: 0.3,
        texture_contrast: 0.3,
    };
    let terrain = build_terrain(&spec, 5)?;
    let k = CameraIntrinsics::centred(96.0, 64, 64)?;
    let altitude = 10.0;
    let frame = render_frame(&terrain, &nadir_pose(Vector3::new(0.0, 0.0, altitude)), &k)?;
    println!(
        "scene: {}x{} image from {altitude} m, {} true-depth pixels",
        k.width,
        k.height,
        frame.true_depth.known_count()
    );

    let mut ctx = PredictContext::new(altitude);
    ctx.refine = RefineOptions { max_iters: 60, ..RefineOptions::default() };
    let weights = LossWeights::default();

    println!("\n{:>8} {:>8} {:>10} {:>8} {:>7}", "density", "returns", "rmse_mm", "rel_mm", "delta");
    for density in [0.0, 0.05, 0.1, 0.3, 0.5, 1.0] {
        let sparse = sample_sparse_from(&frame.true_depth, &k, density, 17);
        let pred = predict(Some(&frame.image), Some(&sparse), &ctx, &k, &weights)?;
        let m = compute_metrics(&pred, &frame.true_depth, 1.25)?;
        println!(
            "{density:>8.2} {:>8} {:>10.2} {:>8.2} {:>7.3}",
            sparse.valid_count(),
            m.rmse_mm,
            m.rel_mm,
            m.delta
        );
    }

    println!("\nloss weights: {weights:?}");
    Ok(())
}
