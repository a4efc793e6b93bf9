//! From a depth map to a landing candidate.
//!
//! Takes a rendered depth map over obstacle-strewn ground, corrects it to a
//! nadir view, classifies every pixel by local slope and roughness, cleans
//! the mask morphologically, and picks the largest circle of safe pixels.
//! The metric radius follows from the pinhole model: a circle of r pixels
//! at plane depth p spans R = p / f * r metres on the ground.
//!
//!     cargo run --example landing_site

use std::error::Error;

use nalgebra::Vector3;

use landfall::geometry::CameraIntrinsics;
use landfall::grid::Mask;
use landfall::harness::nadir_pose;
use landfall::landing::{
    correct_attitude, largest_inscribed_circle, make_candidate, safety_mask, to_plane_depth,
};
use landfall::terrain::{build_terrain, render_frame, TerrainFeature, TerrainSpec};

fn sketch(mask: &Mask, circle: Option<((usize, usize), f64)>) -> String {
    let mut out = String::new();
    for row in 0..mask.height() {
        for col in 0..mask.width() {
            let ch = match circle {
                Some(((cr, cc), radius)) => {
                    let d = (((row as f64) - cr as f64).powi(2)
                        + ((col as f64) - cc as f64).powi(2))
                    .sqrt();
                    if (row, col) == (cr, cc) {
                        '+'
                    } else if (d - radius).abs() < 0.5 {
                        'o'
                    } else if *mask.get(row, col) {
                        '.'
                    } else {
                        '#'
                    }
                }
                None => {
                    if *mask.get(row, col) {
                        '.'
                    } else {
                        '#'
                    }
                }
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

fn main() -> Result<(), Box<dyn Error>> {
    let spec = TerrainSpec {
        extent: 40.0,
        features: vec![
            TerrainFeature::Plane { height: 0.0, slope_deg: 0.0, slope_azimuth_deg: 0.0 },
            TerrainFeature::Roughness { amplitude: 0.25, octaves: 3, base_wavelength: 5.0 },
            TerrainFeature::Box { center: [-2.5, 2.0], size: [2.0, 2.5], height: 1.0 },
            TerrainFeature::Box { center: [3.0, -2.5], size: [1.5, 1.5], height: 0.7 },
            TerrainFeature::FlatDisc { center: [1.0, 2.5], radius: 2.8, height: 0.1 },
        ],
        texture_seed: 3,
        texture_scale: 0.3,
        texture_contrast: 0.3,
    };
    let terrain = build_terrain(&spec, 3)?;
    let k = CameraIntrinsics::centred(96.0, 64, 64)?;
    let altitude = 12.0;
    let pose = nadir_pose(Vector3::new(0.0, 0.0, altitude));
    let frame = render_frame(&terrain, &pose, &k)?;

    let plane = to_plane_depth(&frame.true_depth, &k);
    let corrected = correct_attitude(&plane, 0.0, 0.0, &k)?;
    let mask = safety_mask(&corrected, &k, 10.0, 20.0, 2)?;
    println!(
        "safety thresholds: slope {} deg, roughness {} deg; {} of {} pixels safe after cleanup",
        mask.t_inc_deg,
        mask.t_tur_deg,
        mask.refined.as_slice().iter().filter(|&&s| s).count(),
        mask.refined.len()
    );

    let circle = largest_inscribed_circle(&mask.refined);
    println!("\nsafe (.) unsafe (#) largest circle (o), centre (+):\n");
    print!("{}", sketch(&mask.refined, circle));

    match circle {
        Some((center, radius_px)) => {
            match make_candidate(center, radius_px, &corrected, &k, &pose, 2.0)? {
                Some(c) => {
                    println!(
                        "\ncandidate: centre px ({}, {}), radius {:.1} px = {:.2} m on the ground",
                        c.center_px.0, c.center_px.1, c.radius_px, c.radius_m
                    );
                    println!(
                        "world position ({:.2}, {:.2}, {:.2}), needs 2.0 m -> usable",
                        c.world_position[0], c.world_position[1], c.world_position[2]
                    );
                }
                None => println!("\nlargest circle is under the 2.0 m minimum radius"),
            }
        }
        None => println!("\nno safe pixels at all"),
    }
    Ok(())
}
