//! Track files: one CSV per (subject, route) recording.
//!
//! ```text
//! #meta subject_id=01 route_id=R3 fps=30
//! t,nose_x,nose_y,nose_z,nose_qw,nose_qx,nose_qy,nose_qz,waist_x,waist_y,waist_z,waist_qw,waist_qx,waist_qy,waist_qz,valid
//! 0,0.12,-0.45,4.6,1,0,0,0,0.12,0.15,4.6,1,0,0,0,1
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{relative_head_yaw, UnitQuaternion, Vec3, YawAngle};

pub const HEADER: &str = "t,nose_x,nose_y,nose_z,nose_qw,nose_qx,nose_qy,nose_qz,\
waist_x,waist_y,waist_z,waist_qw,waist_qx,waist_qy,waist_qz,valid";
pub const META_PREFIX: &str = "#meta ";
const N_COLUMNS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RouteId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
}

impl RouteId {
    pub const ALL: [RouteId; 6] = [
        RouteId::R1,
        RouteId::R2,
        RouteId::R3,
        RouteId::R4,
        RouteId::R5,
        RouteId::R6,
    ];

    pub fn group(self) -> RouteGroup {
        match self {
            RouteId::R1 | RouteId::R2 => RouteGroup::R12,
            RouteId::R3 | RouteId::R4 => RouteGroup::R34,
            RouteId::R5 | RouteId::R6 => RouteGroup::R56,
        }
    }

    pub fn index(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for RouteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.index())
    }
}

impl FromStr for RouteId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RouteId::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown route id {s:?}")))
    }
}

/// Left/right route pairs evaluated together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RouteGroup {
    R12,
    R34,
    R56,
}

impl RouteGroup {
    pub const ALL: [RouteGroup; 3] = [RouteGroup::R12, RouteGroup::R34, RouteGroup::R56];
}

impl fmt::Display for RouteGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub nose_pos: Vec3,
    pub nose_q: UnitQuaternion,
    pub waist_pos: Vec3,
    pub waist_q: UnitQuaternion,
    pub valid: bool,
}

impl Frame {
    /// Placeholder for a dropped detection.
    pub fn missing(t: f64) -> Self {
        Frame {
            t,
            nose_pos: Vec3::ZERO,
            nose_q: UnitQuaternion::IDENTITY,
            waist_pos: Vec3::ZERO,
            waist_q: UnitQuaternion::IDENTITY,
            valid: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub subject_id: String,
    pub route_id: RouteId,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl Track {
    pub fn new(subject_id: impl Into<String>, route_id: RouteId, fps: f64, frames: Vec<Frame>) -> Result<Self> {
        let subject_id = subject_id.into();
        if subject_id.is_empty() || subject_id.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad subject id {subject_id:?}")));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be > 0, got {fps}")));
        }
        if let Some(i) = frames.windows(2).position(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidArgument(format!("non-monotone timestamp at frame {}", i + 1)));
        }
        Ok(Track {
            subject_id,
            route_id,
            fps,
            frames,
        })
    }

    /// `s{subject}_{route}`, also the file stem.
    pub fn label(&self) -> String {
        format!("s{}_{}", self.subject_id, self.route_id)
    }

    pub fn group(&self) -> RouteGroup {
        self.route_id.group()
    }

    pub fn valid_count(&self) -> usize {
        self.frames.iter().filter(|f| f.valid).count()
    }
}

/// Accepted depth interval for the nose, closed at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingRange {
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for OperatingRange {
    fn default() -> Self {
        OperatingRange {
            min_depth: 0.5,
            max_depth: 5.46,
        }
    }
}

impl OperatingRange {
    pub fn new(min_depth: f64, max_depth: f64) -> Result<Self> {
        if !(min_depth > 0.0 && min_depth < max_depth && max_depth.is_finite()) {
            return Err(Error::Config(format!(
                "operating range needs 0 < min < max, got [{min_depth}, {max_depth}]"
            )));
        }
        Ok(OperatingRange { min_depth, max_depth })
    }

    pub fn contains(&self, depth: f64) -> bool {
        depth >= self.min_depth && depth <= self.max_depth
    }
}

pub fn filter_operating_range(track: &Track, range: &OperatingRange) -> Track {
    let mut out = track.clone();
    for f in &mut out.frames {
        if f.valid && !range.contains(f.nose_pos.z) {
            f.valid = false;
        }
    }
    out
}

/// Head pose per frame; `None` for invalid or degenerate frames.
pub fn head_pose_series(track: &Track) -> Vec<Option<YawAngle>> {
    track
        .frames
        .iter()
        .map(|f| {
            if f.valid {
                relative_head_yaw(&f.nose_q, &f.waist_q).ok()
            } else {
                None
            }
        })
        .collect()
}

/// Shortest decimal text that reads back as `x` rounded to 9 significant digits.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn parse_number(field: &str, line: usize, column: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("column {column}: cannot parse {field:?} as a number")))
}

/// Parses one data row. Invalid rows may carry non-finite or non-unit
/// placeholders, which are replaced by [`Frame::missing`] values.
pub fn parse_row(row: &str, line: usize) -> Result<Frame> {
    let fields: Vec<&str> = row.split(',').collect();
    if fields.len() != N_COLUMNS {
        return Err(Error::parse(
            line,
            format!("expected {N_COLUMNS} columns, found {}", fields.len()),
        ));
    }
    let columns: Vec<&str> = HEADER.split(',').collect();
    let mut values = [0.0; N_COLUMNS - 1];
    for (i, v) in values.iter_mut().enumerate() {
        *v = parse_number(fields[i], line, columns[i])?;
    }
    let valid = match fields[N_COLUMNS - 1].trim() {
        "1" => true,
        "0" => false,
        other => return Err(Error::parse(line, format!("valid must be 0 or 1, got {other:?}"))),
    };
    let t = values[0];
    if !t.is_finite() {
        return Err(Error::parse(line, "non-finite timestamp"));
    }
    let decoded = decode_row(&values).map_err(|e| Error::parse(line, e.to_string()));
    match (valid, decoded) {
        (true, Ok(mut f)) => {
            f.t = t;
            Ok(f)
        }
        (true, Err(e)) => Err(e),
        (false, Ok(mut f)) => {
            f.t = t;
            f.valid = false;
            Ok(f)
        }
        (false, Err(_)) => Ok(Frame::missing(t)),
    }
}

fn decode_row(v: &[f64; N_COLUMNS - 1]) -> Result<Frame> {
    Ok(Frame {
        t: v[0],
        nose_pos: Vec3::try_new(v[1], v[2], v[3])?,
        nose_q: UnitQuaternion::new(v[4], v[5], v[6], v[7])?,
        waist_pos: Vec3::try_new(v[8], v[9], v[10])?,
        waist_q: UnitQuaternion::new(v[11], v[12], v[13], v[14])?,
        valid: true,
    })
}

pub fn format_row(f: &Frame, out: &mut String) {
    let n = f.nose_pos;
    let w = f.waist_pos;
    let nq = f.nose_q.components();
    let wq = f.waist_q.components();
    let values = [
        f.t, n.x, n.y, n.z, nq[0], nq[1], nq[2], nq[3], w.x, w.y, w.z, wq[0], wq[1], wq[2], wq[3],
    ];
    for v in values {
        out.push_str(&format_number(v));
        out.push(',');
    }
    out.push(if f.valid { '1' } else { '0' });
}

/// Merges `key=value` pairs of a `#meta` line into `meta`.
pub fn parse_meta_line(line: &str, line_no: usize, meta: &mut BTreeMap<String, String>) -> Result<()> {
    let body = line
        .strip_prefix(META_PREFIX)
        .ok_or_else(|| Error::parse(line_no, "metadata line must start with '#meta '"))?;
    for pair in body.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::parse(line_no, format!("metadata entry {pair:?} is not key=value")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    Ok(())
}

pub fn parse_track(content: &str) -> Result<Track> {
    let mut meta = BTreeMap::new();
    let mut header_line = None;
    let mut frames: Vec<Frame> = Vec::new();
    let mut last_meta_line = 0;

    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if header_line.is_none() {
            if line.starts_with('#') {
                parse_meta_line(line, line_no, &mut meta)?;
                last_meta_line = line_no;
                continue;
            }
            if line.trim() != HEADER {
                return Err(Error::parse(line_no, "malformed header"));
            }
            header_line = Some(line_no);
            continue;
        }
        let frame = parse_row(line, line_no)?;
        if let Some(prev) = frames.last() {
            if !(frame.t > prev.t) {
                return Err(Error::parse(line_no, "non-monotone timestamp"));
            }
        }
        frames.push(frame);
    }

    let header_line = header_line.ok_or_else(|| Error::parse(last_meta_line + 1, "missing header"))?;
    let meta_err = |msg: String| Error::parse(header_line, msg);
    let get = |key: &str| {
        meta.get(key)
            .ok_or_else(|| meta_err(format!("missing metadata key {key:?}")))
    };
    let subject_id = get("subject_id")?.clone();
    let route_id: RouteId = get("route_id")?.parse().map_err(|e: Error| meta_err(e.to_string()))?;
    let fps: f64 = get("fps")?
        .parse()
        .map_err(|_| meta_err("fps is not a number".into()))?;
    Track::new(subject_id, route_id, fps, frames).map_err(|e| meta_err(e.to_string()))
}

pub fn serialize_track(track: &Track) -> String {
    let mut out = String::with_capacity(64 + track.frames.len() * 160);
    let _ = writeln!(
        out,
        "{META_PREFIX}subject_id={} route_id={} fps={}",
        track.subject_id,
        track.route_id,
        format_number(track.fps)
    );
    out.push_str(HEADER);
    out.push('\n');
    for f in &track.frames {
        format_row(f, &mut out);
        out.push('\n');
    }
    out
}

pub fn read_track(path: &Path) -> Result<Track> {
    let text = std::fs::read_to_string(path)?;
    parse_track(&text)
}

pub fn write_track(path: &Path, track: &Track) -> Result<()> {
    std::fs::write(path, serialize_track(track))?;
    Ok(())
}

/// Reads every `*.csv` file in `dir`, ordered by file name.
pub fn read_dataset_dir(dir: &Path) -> Result<Vec<Track>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            read_track(p).map_err(|e| match e {
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{}: {message}", p.display()),
                },
                other => other,
            })
        })
        .collect()
}
