//! How fast the rosette scan paints its field of view.
//!
//! The scanner never retraces its own path, so every extra moment of
//! integration hits angular cells no earlier return touched. This prints the
//! covered fraction of a 32x32 angular grid for a range of integration
//! times, plus a sketch of the occupancy at two of them.
//!
//!     cargo run --example scan_coverage

use landfall::lidar::{coverage, scan_directions, ScanPattern};

fn occupancy_sketch(
    pattern: &ScanPattern,
    time: f64,
    bins: usize,
) -> Result<String, landfall::lidar::LidarError> {
    let sin_fov = pattern.fov_half_angle_deg.to_radians().sin();
    let mut hit = vec![false; bins * bins];
    for (_, dir) in scan_directions(pattern, 0.0, time)? {
        let u = (dir.x / sin_fov + 1.0) / 2.0;
        let v = (dir.y / sin_fov + 1.0) / 2.0;
        let col = ((u * bins as f64) as usize).min(bins - 1);
        let row = ((v * bins as f64) as usize).min(bins - 1);
        hit[row * bins + col] = true;
    }
    let mut out = String::new();
    for row in 0..bins {
        for col in 0..bins {
            out.push(if hit[row * bins + col] { '#' } else { '.' });
        }
        out.push('\n');
    }
    Ok(out)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pattern = ScanPattern::default();
    pattern.validate()?;
    println!(
        "pattern: fov half-angle {} deg, petal rates {} / {} Hz, {} points/s",
        pattern.fov_half_angle_deg,
        pattern.petal_rate_a,
        pattern.petal_rate_b,
        pattern.points_per_second
    );
    println!();

    println!("{:>10} {:>10}", "time (s)", "covered");
    for t in [0.05, 0.1, 0.2, 0.5, 1.0, 2.0] {
        let report = coverage(&pattern, t, 32)?;
        println!("{t:>10.2} {:>10.4}", report.covered_fraction);
    }

    for t in [0.1, 1.0] {
        println!("\noccupancy after {t} s (16x16 bins):");
        print!("{}", occupancy_sketch(&pattern, t, 16)?);
    }
    Ok(())
}
