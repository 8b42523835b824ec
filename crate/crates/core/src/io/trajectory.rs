use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::types::{Pose, Trajectory, Vec3};

use super::{numbered_lines, parse_f64};

const HEADER: &str = "# timestamp tx ty tz qx qy qz qw";

/// Parses `timestamp tx ty tz qx qy qz qw` lines. Blank lines and lines starting
/// with `#` are skipped.
pub fn parse_trajectory<R: BufRead>(reader: R) -> Result<Trajectory> {
    let mut poses: Vec<Pose> = Vec::new();
    for entry in numbered_lines(reader) {
        let (line, text) = entry?;
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(
                line,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let mut v = [0.0; 8];
        for (slot, token) in v.iter_mut().zip(&fields) {
            *slot = parse_f64(token, line, "trajectory field")?;
        }
        let pose = Pose::new(v[0], Vec3::new(v[1], v[2], v[3]), [v[4], v[5], v[6], v[7]])
            .map_err(|e| Error::parse(line, e.to_string()))?;
        if let Some(prev) = poses.last() {
            if pose.timestamp() <= prev.timestamp() {
                return Err(Error::Ordering {
                    line,
                    timestamp: pose.timestamp(),
                    previous: prev.timestamp(),
                });
            }
        }
        poses.push(pose);
    }
    Trajectory::new(poses)
}

pub fn write_trajectory<W: Write>(trajectory: &Trajectory, mut writer: W) -> Result<()> {
    writeln!(writer, "{HEADER}")?;
    for pose in trajectory.iter() {
        let p = pose.position();
        let [qx, qy, qz, qw] = pose.quaternion();
        writeln!(
            writer,
            "{} {} {} {} {} {} {} {}",
            pose.timestamp(),
            p.x,
            p.y,
            p.z,
            qx,
            qy,
            qz,
            qw
        )?;
    }
    writer.flush()?;
    Ok(())
}
