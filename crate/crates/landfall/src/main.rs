//! Thin command-line front end over the `landfall` library.
//!
//! Every subcommand that writes artifacts puts them under one output
//! directory together with a `manifest.json` recording the tool, version,
//! seed, and a hash of the effective configuration, so a run can always be
//! traced back to what produced it.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use landfall::geometry::{solve_pnp, CameraIntrinsics, Correspondence};
use landfall::harness::{
    aggregate_metrics, export_depth_dataset, read_records_csv, run_episode, write_records_csv,
    write_summary_csv, EpisodeConfig, EpisodeReport, SummaryRow,
};
use landfall::io::{save_json, RunManifest};
use landfall::lidar::{coverage, ScanPattern};
use nalgebra::Vector3;

#[derive(Parser)]
#[command(name = "landfall", version, about = "Safe-landing-site perception on synthetic terrain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop landing episode and log every frame.
    Simulate {
        /// Episode configuration, JSON. Missing fields take defaults.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; created if absent.
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a recorded flight log into an image + sparse-depth dataset.
    ExportDataset {
        /// Log directory holding poses.csv, lidar.csv, frames.csv, images/,
        /// calib.json.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Trailing LiDAR accumulation window per frame, seconds.
        #[arg(long, default_value_t = 1.0)]
        window: f64,
    },
    /// Aggregate per-frame records into a per-density summary table.
    Evaluate {
        /// A records.csv file, or a directory searched recursively for
        /// files named records.csv.
        #[arg(long)]
        records: PathBuf,
        /// Also write summary.csv and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Angular field-of-view coverage of a scan pattern over time.
    Coverage {
        /// Scan pattern, JSON; the built-in rosette when omitted.
        #[arg(long)]
        pattern: Option<PathBuf>,
        /// Integration times, seconds.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0,2.0")]
        times: Vec<f64>,
        /// Bins per axis of the angular occupancy grid.
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// Also write coverage.csv and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover the camera pose from 3D-2D point correspondences.
    Calibrate {
        /// CSV with header x,y,z,u,v: world point and observed pixel.
        #[arg(long)]
        correspondences: PathBuf,
        /// Camera intrinsics, JSON; a 64 px, 64x64 nadir camera when
        /// omitted (printed so a mismatch is visible).
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        /// Also write solution.json and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, seed, out } => simulate(&config, seed, &out),
        Command::ExportDataset { log, out, window } => export_dataset(&log, &out, window),
        Command::Evaluate { records, out } => evaluate(&records, out.as_deref()),
        Command::Coverage { pattern, times, grid, out } => {
            run_coverage(pattern.as_deref(), &times, grid, out.as_deref())
        }
        Command::Calibrate { correspondences, intrinsics, out } => {
            calibrate(&correspondences, intrinsics.as_deref(), out.as_deref())
        }
    }
}

fn load_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn simulate(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut config: EpisodeConfig = load_json_file(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let config_json = serde_json::to_string_pretty(&config)?;

    let report = run_episode(&config).context("episode failed")?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.json"), &config_json)?;
    RunManifest::new("simulate", config.seed, &config_json).save(out)?;
    save_json(&report, &out.join("report.json"))?;
    write_frames_csv(&report, &out.join("frames.csv"))?;
    write_trajectory_csv(&report, &out.join("trajectory.csv"))?;
    let records = report.records();
    write_records_csv(&records, fs::File::create(out.join("records.csv"))?)?;

    println!(
        "outcome: {:?} after {} frames ({:.2} s simulated)",
        report.outcome,
        report.frames.len(),
        report.frames.last().map_or(0.0, |f| f.t),
    );
    if let Some(td) = report.touchdown {
        println!("touchdown: ({:.2}, {:.2}, {:.2})", td[0], td[1], td[2]);
        match report.distance_to_safe_m {
            Some(d) => println!("distance to oracle-safe ground: {d:.2} m"),
            None => println!("distance to oracle-safe ground: none within 20 m"),
        }
    }
    println!(
        "accumulation time: mean {:.2} s, max {:.2} s",
        report.mean_accumulation_s, report.max_accumulation_s
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn write_frames_csv(report: &EpisodeReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "x",
        "y",
        "z",
        "state",
        "accumulation_s",
        "accepted",
        "sparse_density",
        "candidate_x",
        "candidate_y",
        "candidate_radius_m",
        "rmse_mm",
    ])?;
    for f in &report.frames {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            format!("{:.4}", f.t),
            format!("{:.4}", f.position[0]),
            format!("{:.4}", f.position[1]),
            format!("{:.4}", f.position[2]),
            format!("{:?}", f.state),
            format!("{:.4}", f.accumulation_s),
            opt(f.accepted.map(|a| a.to_string())),
            format!("{:.6}", f.sparse_density),
            opt(f.candidate.map(|c| format!("{:.4}", c.world_position[0]))),
            opt(f.candidate.map(|c| format!("{:.4}", c.world_position[1]))),
            opt(f.candidate.map(|c| format!("{:.4}", c.radius_m))),
            opt(f.metrics.map(|m| format!("{:.3}", m.rmse_mm))),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory_csv(report: &EpisodeReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "x", "y", "z"])?;
    for p in &report.trajectory {
        w.write_record([
            format!("{:.4}", p[0]),
            format!("{:.4}", p[1]),
            format!("{:.4}", p[2]),
            format!("{:.4}", p[3]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn export_dataset(log: &Path, out: &Path, window: f64) -> Result<()> {
    let summary = export_depth_dataset(log, out, window)
        .with_context(|| format!("exporting {}", log.display()))?;
    let args = serde_json::json!({ "log": log, "window_s": window });
    RunManifest::new("export-dataset", 0, &args.to_string()).save(out)?;
    println!(
        "exported {} frames, skipped {} without LiDAR in window",
        summary.exported, summary.skipped
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn collect_record_files(root: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_record_files(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == "records.csv") {
            found.push(path);
        }
    }
    Ok(())
}

fn evaluate(records: &Path, out: Option<&Path>) -> Result<()> {
    let mut files = Vec::new();
    if records.is_file() {
        files.push(records.to_path_buf());
    } else {
        collect_record_files(records, &mut files)?;
        files.sort();
    }
    if files.is_empty() {
        bail!("no records.csv found under {}", records.display());
    }

    let mut all = Vec::new();
    for file in &files {
        let reader = fs::File::open(file).with_context(|| format!("opening {}", file.display()))?;
        all.extend(read_records_csv(reader, file)?);
    }
    let rows = aggregate_metrics(&all)
        .with_context(|| format!("{} files held no frame records", files.len()))?;

    println!("{} frames from {} file(s)", all.len(), files.len());
    print_summary_table(&rows);

    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_summary_csv(&rows, fs::File::create(out.join("summary.csv"))?)?;
        let args = serde_json::json!({ "records": records, "files": files.len() });
        RunManifest::new("evaluate", 0, &args.to_string()).save(out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn print_summary_table(rows: &[SummaryRow]) {
    println!("{:>8} {:>7} {:>10} {:>9} {:>7} {:>7}", "density", "frames", "rmse_mm", "rel_mm", "delta", "ssim");
    for r in rows {
        println!(
            "{:>8.2} {:>7} {:>10.2} {:>9.2} {:>7.3} {:>7}",
            r.density,
            r.frames,
            r.rmse_mm,
            r.rel_mm,
            r.delta,
            r.ssim.map_or_else(|| "-".to_string(), |s| format!("{s:.3}")),
        );
    }
}

fn run_coverage(
    pattern_path: Option<&Path>,
    times: &[f64],
    grid: usize,
    out: Option<&Path>,
) -> Result<()> {
    let pattern: ScanPattern = match pattern_path {
        Some(path) => load_json_file(path)?,
        None => ScanPattern::default(),
    };
    if times.is_empty() {
        bail!("--times needs at least one integration time");
    }

    let mut reports = Vec::with_capacity(times.len());
    for &t in times {
        let report = coverage(&pattern, t, grid)?;
        println!("t = {:6.2} s  covered {:.4}", t, report.covered_fraction);
        reports.push(report);
    }

    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let mut w = csv::Writer::from_path(out.join("coverage.csv"))?;
        w.write_record(["integration_time", "covered_fraction", "grid"])?;
        for r in &reports {
            w.write_record([
                format!("{}", r.integration_time),
                format!("{}", r.covered_fraction),
                format!("{}", r.grid),
            ])?;
        }
        w.flush()?;
        let pattern_json = serde_json::to_string_pretty(&pattern)?;
        fs::write(out.join("pattern.json"), &pattern_json)?;
        RunManifest::new("coverage", 0, &pattern_json).save(out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.clone();
    let expected = ["x", "y", "z", "u", "v"];
    let normalized: Vec<String> =
        header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if normalized != expected {
        bail!("{}: expected header x,y,z,u,v, found {header:?}", path.display());
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let field = |j: usize| -> Result<f64> {
            row.get(j)
                .with_context(|| format!("{} row {}: missing {}", path.display(), i + 2, expected[j]))?
                .trim()
                .parse::<f64>()
                .with_context(|| format!("{} row {}: bad {}", path.display(), i + 2, expected[j]))
        };
        out.push(Correspondence {
            world_point: Vector3::new(field(0)?, field(1)?, field(2)?),
            pixel: (field(3)?, field(4)?),
        });
    }
    Ok(out)
}

fn calibrate(correspondences: &Path, intrinsics: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let k: CameraIntrinsics = match intrinsics {
        Some(path) => load_json_file(path)?,
        None => CameraIntrinsics::centred(64.0, 64, 64).expect("valid default intrinsics"),
    };
    let points = read_correspondences(correspondences)?;
    println!(
        "{} correspondences, intrinsics focal {} px on {}x{}",
        points.len(),
        k.focal,
        k.width,
        k.height
    );

    let solution = solve_pnp(&points, &k).context("pose estimation failed")?;
    let t = solution.camera_from_world.translation();
    let q = solution.camera_from_world.rotation();
    println!("camera_from_world translation: ({:.6}, {:.6}, {:.6})", t.x, t.y, t.z);
    println!(
        "camera_from_world quaternion (w, x, y, z): ({:.6}, {:.6}, {:.6}, {:.6})",
        q.w, q.i, q.j, q.k
    );
    println!("mean reprojection error: {:.3e} px", solution.mean_reprojection_error);
    println!("refinement iterations: {}", solution.iterations);

    if let Some(out) = out {
        fs::create_dir_all(out)?;
        save_json(&solution, &out.join("solution.json"))?;
        let args = serde_json::json!({
            "correspondences": correspondences,
            "intrinsics": k,
        });
        RunManifest::new("calibrate", 0, &args.to_string()).save(out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
