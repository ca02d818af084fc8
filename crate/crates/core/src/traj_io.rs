//! Trajectory text files: one `timestamp tx ty tz qx qy qz qw` record per line.
//!
//! Quaternions are Hamilton, scalar-last. Lines may carry `#` comments.

use std::fmt::Write as _;
use std::io::Read;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::se3::{Pose, Rotation, Trajectory};

/// Quaternions further than this from unit norm are rejected instead of renormalized.
pub const QUATERNION_NORM_TOL: f64 = 1e-3;

/// One parsed line of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryFileRecord {
    pub timestamp: f64,
    pub translation: Vector3<f64>,
    /// `(qx, qy, qz, qw)`, unit norm.
    pub quaternion: [f64; 4],
}

/// Hamilton unit quaternion `(x, y, z, w)` to rotation matrix.
pub fn quaternion_to_rotation(q: [f64; 4]) -> Rotation {
    let [x, y, z, w] = q;
    Rotation::from_matrix_unchecked(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Shepperd's method. Returns `(x, y, z, w)` with `w >= 0`.
pub fn rotation_to_quaternion(r: &Rotation) -> [f64; 4] {
    let m = r.matrix();
    let tr = m.trace();
    let diag = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    // Pick the largest of 4w², 4x², 4y², 4z² to divide by.
    let mut q = if tr >= diag[0] && tr >= diag[1] && tr >= diag[2] {
        let s = 2.0 * (1.0 + tr).sqrt(); // 4w
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
            s / 4.0,
        ]
    } else if diag[0] >= diag[1] && diag[0] >= diag[2] {
        let s = 2.0 * (1.0 + diag[0] - diag[1] - diag[2]).sqrt(); // 4x
        [
            s / 4.0,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(2, 1)] - m[(1, 2)]) / s,
        ]
    } else if diag[1] >= diag[2] {
        let s = 2.0 * (1.0 + diag[1] - diag[0] - diag[2]).sqrt(); // 4y
        [
            (m[(0, 1)] + m[(1, 0)]) / s,
            s / 4.0,
            (m[(1, 2)] + m[(2, 1)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
        ]
    } else {
        let s = 2.0 * (1.0 + diag[2] - diag[0] - diag[1]).sqrt(); // 4z
        [
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            s / 4.0,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    };
    if q[3] < 0.0 {
        q.iter_mut().for_each(|v| *v = -*v);
    }
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

fn parse_record(line: &str, lineno: usize) -> Result<TrajectoryFileRecord> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 8 {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected 8 fields `timestamp tx ty tz qx qy qz qw`, found {}", fields.len()),
        });
    }
    let mut v = [0.0; 8];
    for (slot, field) in v.iter_mut().zip(&fields) {
        *slot = field.parse::<f64>().map_err(|e| Error::Parse {
            line: lineno,
            message: format!("`{field}`: {e}"),
        })?;
        if !slot.is_finite() {
            return Err(Error::Parse { line: lineno, message: format!("non-finite value `{field}`") });
        }
    }
    let q = [v[4], v[5], v[6], v[7]];
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
        return Err(Error::Parse {
            line: lineno,
            message: format!("quaternion norm {norm} is not within {QUATERNION_NORM_TOL} of 1"),
        });
    }
    Ok(TrajectoryFileRecord {
        timestamp: v[0],
        translation: Vector3::new(v[1], v[2], v[3]),
        quaternion: q.map(|c| c / norm),
    })
}

/// Parses every record line of `text`.
pub fn parse_records(text: &str) -> Result<Vec<TrajectoryFileRecord>> {
    let mut records: Vec<TrajectoryFileRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let rec = parse_record(line, i + 1)?;
        if let Some(prev) = records.last() {
            if rec.timestamp <= prev.timestamp {
                return Err(Error::Validation(format!(
                    "line {}: timestamp {} does not increase (previous {})",
                    i + 1,
                    rec.timestamp,
                    prev.timestamp
                )));
            }
        }
        records.push(rec);
    }
    Ok(records)
}

/// Parses a trajectory. The frame rate is recovered from the timestamp span.
pub fn parse_trajectory<R: Read>(mut input: R) -> Result<Trajectory> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    parse_trajectory_str(&text)
}

pub fn parse_trajectory_str(text: &str) -> Result<Trajectory> {
    let records = parse_records(text)?;
    if records.len() < 2 {
        return Err(Error::Validation(format!(
            "trajectory needs at least 2 records, found {}",
            records.len()
        )));
    }
    let span = records[records.len() - 1].timestamp - records[0].timestamp;
    let frame_rate = (records.len() - 1) as f64 / span;
    let poses = records
        .iter()
        .map(|r| Pose::new(quaternion_to_rotation(r.quaternion), r.translation))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(poses, frame_rate)
}

/// Writes `t` with timestamps `i / frame_rate`. Numbers use the shortest
/// decimal form that reads back to the same `f64`.
pub fn serialize_trajectory(t: &Trajectory) -> String {
    let mut out = String::with_capacity(t.len() * 96);
    for (i, pose) in t.poses().iter().enumerate() {
        let ts = i as f64 / t.frame_rate();
        let tr = &pose.translation;
        let [qx, qy, qz, qw] = rotation_to_quaternion(&pose.rotation);
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            fmt_num(ts),
            fmt_num(tr.x),
            fmt_num(tr.y),
            fmt_num(tr.z),
            fmt_num(qx),
            fmt_num(qy),
            fmt_num(qz),
            fmt_num(qw)
        );
    }
    out
}

fn fmt_num(v: f64) -> String {
    // Normalize -0 so identical poses always print identically.
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}
