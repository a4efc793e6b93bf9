//! On-disk artifact formats.
//!
//! Three kinds of files leave the pipeline: grayscale images as 16-bit
//! binary PGM, depth maps as a raw `f64` grid with a one-line header, and
//! JSON for everything structured (configs, sidecars, reports, manifests).
//! The depth format is lossless: every `f64` is written little-endian
//! bit-for-bit, with NaN marking unknown pixels, so a saved map reloads
//! exactly equal.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{DepthKind, DepthMap, GrayImage, Grid};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format { path: path.to_path_buf(), reason: reason.into() }
}

const PGM_MAX: f64 = 65535.0;

/// Writes a grayscale image as binary PGM (`P5`, 16-bit, big-endian
/// samples). Intensities are clamped to `[0, 1]` and quantised.
pub fn write_pgm<W: Write>(image: &GrayImage, mut writer: W) -> std::io::Result<()> {
    write!(writer, "P5\n{} {}\n65535\n", image.width(), image.height())?;
    let mut bytes = Vec::with_capacity(image.len() * 2);
    for v in image.as_slice() {
        let q = (v.clamp(0.0, 1.0) * PGM_MAX).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    writer.write_all(&bytes)
}

pub fn save_pgm(image: &GrayImage, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_err(path))?;
    write_pgm(image, BufWriter::new(file)).map_err(file_err(path))
}

/// Reads a binary PGM written by [`write_pgm`]; also accepts 8-bit files.
pub fn load_pgm(path: &Path) -> Result<GrayImage, IoError> {
    let file = File::open(path).map_err(file_err(path))?;
    let mut reader = BufReader::new(file);
    let mut header = [0u64; 3];
    let mut magic_ok = false;
    let mut field = 0;
    // Header is ASCII tokens (magic, width, height, maxval) separated by
    // whitespace, with '#' comments; a single whitespace byte ends it.
    let mut token = Vec::new();
    while field < 3 {
        let mut byte = [0u8; 1];
        reader.read_exact(&mut byte).map_err(file_err(path))?;
        let b = byte[0];
        if b == b'#' {
            let mut skip = Vec::new();
            reader.read_until(b'\n', &mut skip).map_err(file_err(path))?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            let text = String::from_utf8_lossy(&token).into_owned();
            if !magic_ok {
                if text != "P5" {
                    return Err(format_err(path, format!("not a binary PGM (magic {text:?})")));
                }
                magic_ok = true;
            } else {
                header[field] = text
                    .parse()
                    .map_err(|_| format_err(path, format!("bad header field {text:?}")))?;
                field += 1;
            }
            token.clear();
        } else {
            token.push(b);
        }
    }
    let (width, height, maxval) = (header[0] as usize, header[1] as usize, header[2]);
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    let wide = maxval > 255;
    let mut data = vec![0u8; width * height * if wide { 2 } else { 1 }];
    reader.read_exact(&mut data).map_err(file_err(path))?;
    let scale = 1.0 / maxval as f64;
    let pixels: Vec<f64> = if wide {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale).collect()
    } else {
        data.iter().map(|&b| b as f64 * scale).collect()
    };
    Ok(Grid::from_vec(width, height, pixels))
}

const DEPTH_MAGIC: &str = "Pf8";

fn kind_tag(kind: DepthKind) -> &'static str {
    match kind {
        DepthKind::PlaneDepth => "plane",
        DepthKind::RayDepth => "ray",
    }
}

/// Writes a depth map losslessly: an ASCII header line
/// `Pf8 <width> <height> <plane|ray>` followed by row-major `f64`
/// little-endian samples, NaN where depth is unknown.
pub fn write_depth<W: Write>(map: &DepthMap, mut writer: W) -> std::io::Result<()> {
    write!(writer, "{DEPTH_MAGIC} {} {} {}\n", map.width(), map.height(), kind_tag(map.kind()))?;
    let mut bytes = Vec::with_capacity(map.raw().len() * 8);
    for v in map.raw().as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    writer.write_all(&bytes)
}

pub fn save_depth(map: &DepthMap, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_err(path))?;
    write_depth(map, BufWriter::new(file)).map_err(file_err(path))
}

pub fn load_depth(path: &Path) -> Result<DepthMap, IoError> {
    let file = File::open(path).map_err(file_err(path))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(file_err(path))?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != DEPTH_MAGIC {
        return Err(format_err(path, format!("bad depth header {:?}", line.trim_end())));
    }
    let width: usize =
        fields[1].parse().map_err(|_| format_err(path, "bad width in depth header"))?;
    let height: usize =
        fields[2].parse().map_err(|_| format_err(path, "bad height in depth header"))?;
    let kind = match fields[3] {
        "plane" => DepthKind::PlaneDepth,
        "ray" => DepthKind::RayDepth,
        other => return Err(format_err(path, format!("unknown depth kind {other:?}"))),
    };
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero depth dimension"));
    }
    let mut bytes = vec![0u8; width * height * 8];
    reader.read_exact(&mut bytes).map_err(file_err(path))?;
    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing).map_err(file_err(path))? != 0 {
        return Err(format_err(path, "trailing bytes after depth payload"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(DepthMap::from_grid(Grid::from_vec(width, height, values), kind))
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_err(path))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    writer.write_all(b"\n").map_err(file_err(path))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(file_err(path))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Identity card written into every run directory: which tool produced it,
/// from which configuration (by content hash), with which seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(tool: &str, seed: u64, config_json: &str) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            tool: tool.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: sha256_hex(config_json.as_bytes()),
            created_unix,
        }
    }

    /// Writes `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, IoError> {
        let path = dir.join("manifest.json");
        save_json(self, &path)?;
        Ok(path)
    }
}
