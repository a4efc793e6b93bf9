//! Timestamped pose tracks with interpolation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::transform::{slerp, Transform};
use super::GeometryError;

/// One sensor-to-world pose at a known time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: Transform,
}

/// Poses sorted by strictly increasing timestamp.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseTrack {
    entries: Vec<TimedPose>,
}

impl PoseTrack {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from entries that must already be strictly increasing in time.
    pub fn from_entries(entries: Vec<TimedPose>) -> Result<Self, GeometryError> {
        let mut track = Self::new();
        for e in entries {
            track.push(e)?;
        }
        Ok(track)
    }

    /// Appends a pose; its timestamp must exceed the last one.
    pub fn push(&mut self, entry: TimedPose) -> Result<(), GeometryError> {
        if !entry.timestamp.is_finite() {
            return Err(GeometryError::NonFinite { what: "timestamp" });
        }
        if let Some(last) = self.entries.last() {
            if entry.timestamp <= last.timestamp {
                return Err(GeometryError::NonMonotonicTrack {
                    prev: last.timestamp,
                    next: entry.timestamp,
                });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TimedPose] {
        &self.entries
    }

    /// First and last timestamp, if any.
    pub fn span(&self) -> Option<(f64, f64)> {
        match (self.entries.first(), self.entries.last()) {
            (Some(a), Some(b)) => Some((a.timestamp, b.timestamp)),
            _ => None,
        }
    }

    /// Interpolated pose at time `t`; see [`interpolate_pose`].
    pub fn sample(&self, t: f64) -> Result<Transform, GeometryError> {
        interpolate_pose(self, t)
    }

    /// Writes `t,px,py,pz,qw,qx,qy,qz` rows with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "px", "py", "pz", "qw", "qx", "qy", "qz"])?;
        for e in &self.entries {
            let t = e.pose.translation();
            let q = e.pose.rotation().into_inner();
            // Default f64 formatting prints the shortest string that parses
            // back to the same bits, so the file round-trips exactly.
            w.write_record(
                [e.timestamp, t.x, t.y, t.z, q.w, q.i, q.j, q.k]
                    .iter()
                    .map(|v| format!("{v}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file).map_err(std::io::Error::other)
    }

    /// Parses the format written by [`PoseTrack::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GeometryError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut track = Self::new();
        for record in r.records() {
            let record = record.map_err(|_| GeometryError::NonFinite { what: "pose csv row" })?;
            let mut vals = [0.0f64; 8];
            if record.len() != 8 {
                return Err(GeometryError::NonFinite { what: "pose csv row" });
            }
            for (slot, field) in vals.iter_mut().zip(record.iter()) {
                *slot = field
                    .trim()
                    .parse()
                    .map_err(|_| GeometryError::NonFinite { what: "pose csv field" })?;
            }
            let pose = Transform::from_wxyz_translation(
                vals[4],
                vals[5],
                vals[6],
                vals[7],
                Vector3::new(vals[1], vals[2], vals[3]),
            )?;
            track.push(TimedPose { timestamp: vals[0], pose })?;
        }
        Ok(track)
    }

    pub fn load_csv(path: &Path) -> Result<Self, GeometryError> {
        let file = std::fs::File::open(path).map_err(|_| GeometryError::NonFinite { what: "pose csv file" })?;
        Self::read_csv(file)
    }
}

/// Pose at time `t` by piecewise interpolation: translation linearly, rotation
/// by shortest-arc slerp between the bracketing entries. Exact at entry
/// timestamps; `t` outside the track span is an error, never an extrapolation.
pub fn interpolate_pose(track: &PoseTrack, t: f64) -> Result<Transform, GeometryError> {
    let entries = track.entries();
    if entries.is_empty() {
        return Err(GeometryError::EmptyTrack);
    }
    let (start, end) = track.span().expect("non-empty track has a span");
    if !(t >= start && t <= end) {
        return Err(GeometryError::OutsideTrack { t, start, end });
    }
    let idx = entries.partition_point(|e| e.timestamp < t);
    if idx < entries.len() && entries[idx].timestamp == t {
        return Ok(entries[idx].pose);
    }
    let before = &entries[idx - 1];
    let after = &entries[idx];
    let s = (t - before.timestamp) / (after.timestamp - before.timestamp);
    let rotation = slerp(&before.pose.rotation(), &after.pose.rotation(), s);
    let translation = before.pose.translation() * (1.0 - s) + after.pose.translation() * s;
    Ok(Transform::new(rotation, translation))
}
