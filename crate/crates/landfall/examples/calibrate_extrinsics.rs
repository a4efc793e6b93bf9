//! Recovering a camera pose from 3D-2D correspondences.
//!
//! Builds a ground-truth pose, projects a random point cloud through it,
//! and runs the PnP solver twice: on exact pixels and on pixels with half a
//! pixel of measurement noise. Pass a directory to also write the noisy
//! correspondences and intrinsics in the format `landfall calibrate` reads:
//!
//!     cargo run --example calibrate_extrinsics -- /tmp/calib

use std::error::Error;
use std::fs;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use landfall::geometry::{project, solve_pnp, CameraIntrinsics, Correspondence, Transform};

fn scatter_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-1.0..1.5),
            )
        })
        .collect()
}

fn report(label: &str, truth: &Transform, solution: &landfall::geometry::PnpSolution) {
    let rot_err = truth.rotation_angle_to(&solution.camera_from_world).to_degrees();
    let trans_err = truth.translation_distance_to(&solution.camera_from_world);
    println!("{label}:");
    println!("  rotation error    {rot_err:.2e} deg");
    println!("  translation error {:.2e} cm", trans_err * 100.0);
    println!("  mean reprojection {:.2e} px", solution.mean_reprojection_error);
    println!("  iterations        {}", solution.iterations);
}

fn main() -> Result<(), Box<dyn Error>> {
    let k = CameraIntrinsics::centred(96.0, 128, 128)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let axis = Vector3::new(0.3, -0.2, 0.9).normalize();
    let truth = Transform::new(
        UnitQuaternion::from_scaled_axis(axis * 0.4)
            * UnitQuaternion::from_scaled_axis(Vector3::x() * std::f64::consts::PI),
        Vector3::new(1.5, -0.8, 12.0),
    )
    .inverse();

    let mut exact = Vec::new();
    for p in scatter_points(&mut rng, 60) {
        let cam = truth.apply(&p);
        if let Ok(px) = project(&cam, &k) {
            if k.in_image(px) {
                exact.push(Correspondence { world_point: p, pixel: px });
            }
        }
    }
    println!("{} of 60 scattered points visible from the true pose\n", exact.len());

    report("noiseless", &truth, &solve_pnp(&exact, &k)?);

    let noisy: Vec<Correspondence> = exact
        .iter()
        .map(|c| Correspondence {
            world_point: c.world_point,
            pixel: (
                c.pixel.0 + rng.gen_range(-0.5..0.5),
                c.pixel.1 + rng.gen_range(-0.5..0.5),
            ),
        })
        .collect();
    println!();
    report("0.5 px noise", &truth, &solve_pnp(&noisy, &k)?);

    if let Some(dir) = std::env::args().nth(1) {
        let dir = Path::new(&dir);
        fs::create_dir_all(dir)?;
        let mut csv = String::from("x,y,z,u,v\n");
        for c in &noisy {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                c.world_point.x, c.world_point.y, c.world_point.z, c.pixel.0, c.pixel.1
            ));
        }
        fs::write(dir.join("correspondences.csv"), csv)?;
        fs::write(dir.join("intrinsics.json"), serde_json::to_string_pretty(&k)?)?;
        println!("\nwrote {}", dir.display());
        println!(
            "try: landfall calibrate --correspondences {0}/correspondences.csv --intrinsics {0}/intrinsics.json",
            dir.display()
        );
    }
    Ok(())
}
