//! Readers and writers for the on-disk formats: TUM-style trajectory text,
//! ASCII PCD, XYZ text maps and PGM images.
//!
//! Floats are written in Rust's shortest round-trip representation, so
//! `parse(write(x)) == x` bit for bit.

mod pcd;
mod pgm;
mod trajectory;
mod xyz;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub use pcd::{parse_pcd, write_pcd};
pub use pgm::{read_depth_pgm, read_pgm, write_depth_pgm, write_grid_pgm, PgmImage};
pub use trajectory::{parse_trajectory, write_trajectory};
pub use xyz::{parse_xyz, write_xyz};

use crate::error::{Error, Result};
use crate::types::{OccupancyGrid2D, PointCloud, Trajectory};

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    open(path)
        .and_then(parse_trajectory)
        .map_err(|e| e.context(path.display().to_string()))
}

/// Loads a point cloud, choosing the parser by extension (`.pcd`, anything else is XYZ text).
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let is_pcd = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pcd"));
    open(path)
        .and_then(|r| if is_pcd { parse_pcd(r) } else { parse_xyz(r) })
        .map_err(|e| e.context(path.display().to_string()))
}

/// Loads a 16-bit millimeter depth PGM as `(width, height, meters)`.
pub fn load_depth(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    open(path)
        .and_then(read_depth_pgm)
        .map_err(|e| e.context(path.display().to_string()))
}

pub fn save_trajectory(path: impl AsRef<Path>, trajectory: &Trajectory) -> Result<()> {
    save(path.as_ref(), |w| write_trajectory(trajectory, w))
}

/// Writes a point cloud as PCD or XYZ text by extension, like [`load_cloud`].
pub fn save_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pcd")) {
        save(path, |w| write_pcd(cloud, w))
    } else {
        save(path, |w| write_xyz(cloud, w))
    }
}

pub fn save_depth(path: impl AsRef<Path>, width: usize, height: usize, depth: &[f64]) -> Result<()> {
    save(path.as_ref(), |w| write_depth_pgm(width, height, depth, w))
}

pub fn save_grid_pgm(path: impl AsRef<Path>, grid: &OccupancyGrid2D) -> Result<()> {
    save(path.as_ref(), |w| write_grid_pgm(grid, w))
}

fn save(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let result = File::create(path).map_err(Error::from).and_then(|f| {
        let mut w = BufWriter::new(f);
        write(&mut w)?;
        w.flush()?;
        Ok(())
    });
    result.map_err(|e| e.context(path.display().to_string()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Yields `(1-based line number, line)` pairs, turning invalid UTF-8 into a parse error.
pub(crate) fn numbered_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.split(b'\n').enumerate().map(|(i, bytes)| {
        let line = i + 1;
        let mut bytes = bytes?;
        if bytes.last() == Some(&b'\r') {
            bytes.pop();
        }
        String::from_utf8(bytes)
            .map(|s| (line, s))
            .map_err(|_| Error::parse(line, "invalid UTF-8"))
    })
}

pub(crate) fn parse_f64(token: &str, line: usize, what: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(line, format!("{what}: `{token}` is not a finite number"))),
    }
}
