//! Recording a flight log and turning it into a training dataset.
//!
//! A flight log is the raw material: timestamped poses, LiDAR returns,
//! camera frames, and the mounting calibration. The exporter replays it,
//! motion-compensates each frame's trailing LiDAR window into the camera,
//! and writes one image plus sparse-depth pair per frame. Run with an
//! optional directory to keep the artifacts; otherwise a temp directory is
//! used and reported:
//!
//!     cargo run --example export_dataset -- /tmp/dataset

use std::error::Error;
use std::path::PathBuf;

use landfall::harness::{export_depth_dataset, record_flight_log, FlightLogSpec};
use landfall::io::load_depth;
use landfall::terrain::{TerrainFeature, TerrainSpec};

fn main() -> Result<(), Box<dyn Error>> {
    let root = match std::env::args().nth(1) {
        Some(dir) => PathBuf::from(dir),
        None => std::env::temp_dir().join("landfall_export_demo"),
    };
    let log_dir = root.join("log");
    let out_dir = root.join("dataset");

    let terrain = TerrainSpec {
        extent: 60.0,
        features: vec![
            TerrainFeature::Plane { height: 0.0, slope_deg: 2.0, slope_azimuth_deg: 115.0 },
            TerrainFeature::Roughness { amplitude: 0.5, octaves: 3, base_wavelength: 6.0 },
            TerrainFeature::Step { position: [4.0, 1.0], size: 3.0, height: 0.6 },
        ],
        texture_seed: 21,
        texture_scale: 0.3,
        texture_contrast: 0.3,
    };
    let mut spec = FlightLogSpec::drift(terrain, 21);
    spec.range_noise_sigma_m = 0.01;

    let frames = record_flight_log(&spec, &log_dir)?;
    println!(
        "recorded {} frames over {} s of flight into {}",
        frames,
        spec.duration_s,
        log_dir.display()
    );
    println!("log layout: poses.csv, lidar.csv, frames.csv, images/, calib.json");

    let window = 1.0;
    let summary = export_depth_dataset(&log_dir, &out_dir, window)?;
    println!(
        "\nexported {} image + sparse-depth pairs with a {window} s window, skipped {}",
        summary.exported, summary.skipped
    );

    let sample = out_dir.join("sparse").join("frame_000010.pf8");
    let depth = load_depth(&sample)?;
    let depths: Vec<f64> = depth.iter_known().map(|(_, _, d)| d).collect();
    let mean = depths.iter().sum::<f64>() / depths.len() as f64;
    println!(
        "frame 10: {} returns hit the image, mean plane depth {:.2} m",
        depths.len(),
        mean
    );
    println!(
        "\nsame thing via the CLI: landfall export-dataset --log {} --out {} --window {window}",
        log_dir.display(),
        out_dir.display()
    );
    Ok(())
}
