//! The stereo self-check that decides whether a depth map can be trusted.
//!
//! No ground truth is consulted: the left image is warped through the
//! candidate depth into the right view, and the synthesized view's
//! similarity to the real right image is compared against two references
//! computed the same way. A prediction passes when
//!
//!     sim_pred > (sim + sim_d) / 2    or    sim_pred > sim + 0.2
//!
//! where sim is raw left/right similarity and sim_d comes from interpolated
//! sparse returns alone. The demo runs the check on an honest completion,
//! then on a constant-depth map that ignores the scene.
//!
//!     cargo run --example self_evaluation

use std::error::Error;

use nalgebra::Vector3;

use landfall::geometry::{CameraIntrinsics, Transform};
use landfall::grid::{DepthKind, DepthMap};
use landfall::harness::{nadir_pose, sample_sparse_from};
use landfall::image_quality::{evaluate_prediction, EvalResult};
use landfall::predictor::{predict, LossWeights, PredictContext, RefineOptions};
use landfall::terrain::{build_terrain, render_frame, TerrainFeature, TerrainSpec};

fn verdict(label: &str, r: &EvalResult) {
    let sim_d = r.sim_d.map_or_else(|| "   -".to_string(), |s| format!("{s:.3}"));
    println!(
        "{label:>18}: sim {:.3}  sim_d {sim_d}  sim_pred {:.3}  -> {}",
        r.sim,
        r.sim_pred,
        if r.accepted { "accepted" } else { "rejected" }
    );
}

fn main() -> Result<(), Box<dyn Error>> {
    let spec = TerrainSpec {
        extent: 40.0,
        features: vec![
            TerrainFeature::Plane { height: 0.0, slope_deg: 0.0, slope_azimuth_deg: 0.0 },
            TerrainFeature::Roughness { amplitude: 0.4, octaves: 3, base_wavelength: 5.0 },
        ],
        texture_seed: 9,
        texture_scale: 0.3,
        texture_contrast: 0.3,
    };
    let terrain = build_terrain(&spec, 9)?;
    let k = CameraIntrinsics::centred(96.0, 64, 64)?;
    let baseline = 0.3;
    let altitude = 10.0;

    let left_pose = nadir_pose(Vector3::new(0.0, 0.0, altitude));
    let right_in_left = Transform::from_translation(Vector3::new(baseline, 0.0, 0.0));
    let right_pose = left_pose.compose(&right_in_left);
    let left = render_frame(&terrain, &left_pose, &k)?;
    let right = render_frame(&terrain, &right_pose, &k)?;
    let right_from_left = right_in_left.inverse();
    println!(
        "stereo pair from {altitude} m, baseline {baseline} m ({:.1} px disparity at ground)",
        k.focal * baseline / altitude
    );
    println!();

    let sparse = sample_sparse_from(&left.true_depth, &k, 0.1, 23);
    let mut ctx = PredictContext::new(altitude);
    ctx.refine = RefineOptions { max_iters: 60, ..RefineOptions::default() };
    let pred = predict(Some(&left.image), Some(&sparse), &ctx, &k, &LossWeights::default())?;
    let honest = evaluate_prediction(&left.image, &right.image, &pred, &sparse, &right_from_left, &k)?;
    verdict("10% completion", &honest);

    let flat = DepthMap::constant(k.width, k.height, 0.4 * altitude, DepthKind::RayDepth);
    let fake = evaluate_prediction(&left.image, &right.image, &flat, &sparse, &right_from_left, &k)?;
    verdict("constant 4 m map", &fake);

    let empty = sample_sparse_from(&left.true_depth, &k, 0.0, 23);
    let image_only = predict(Some(&left.image), None, &ctx, &k, &LossWeights::default())?;
    let no_lidar =
        evaluate_prediction(&left.image, &right.image, &image_only, &empty, &right_from_left, &k)?;
    verdict("no returns at all", &no_lidar);
    println!("\nwithout sparse returns there is no sim_d, so only the +0.2 clause can accept");
    Ok(())
}
