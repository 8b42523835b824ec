//! PGM (Netpbm graymap) reading and writing: occupancy-grid exports and 16-bit
//! millimeter depth images.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::types::OccupancyGrid2D;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major, top row first.
    pub pixels: Vec<u16>,
}

impl PgmImage {
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }
}

/// Reads plain (`P2`) or raw (`P5`, 8- or 16-bit big-endian) PGM.
pub fn read_pgm<R: BufRead>(mut reader: R) -> Result<PgmImage> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut cursor = HeaderCursor { bytes: &bytes, pos: 0 };
    let magic = cursor.token()?;
    let raw = match magic.as_str() {
        "P2" => false,
        "P5" => true,
        other => return Err(Error::Pgm(format!("unsupported magic `{other}`"))),
    };
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(Error::Pgm(format!("maxval {maxval} out of range")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| Error::Pgm("image dimensions overflow".into()))?;
    let pixels = if raw {
        // Exactly one whitespace byte separates the header from the raster.
        let start = cursor.pos + 1;
        let depth = if maxval > 255 { 2 } else { 1 };
        let body = bytes.get(start..).unwrap_or_default();
        if body.len() / depth < count {
            return Err(Error::Pgm(format!(
                "raster holds {} pixels, expected {count}",
                body.len() / depth
            )));
        }
        body.chunks_exact(depth)
            .take(count)
            .map(|c| match c {
                [hi, lo] => u16::from_be_bytes([*hi, *lo]),
                [v] => u16::from(*v),
                _ => unreachable!(),
            })
            .collect()
    } else {
        let mut pixels = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            pixels.push(cursor.number("pixel")?);
        }
        pixels.into_iter().map(|v| v as u16).collect::<Vec<_>>()
    };
    if let Some(v) = pixels.iter().find(|&&v| usize::from(v) > maxval) {
        return Err(Error::Pgm(format!("pixel value {v} exceeds maxval {maxval}")));
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn token(&mut self) -> Result<String> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(Error::Pgm("unexpected end of file".into())),
            }
        }
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| Error::Pgm(format!("{what} `{t}` is not a non-negative integer")))
    }
}

/// Writes a plain P2 image: occupied cells black (0), free cells white (255).
/// Column `c` is cell x index `min_x + c`; row `r` is cell y index
/// `min_y + height - 1 - r`, so +y points up in the image.
pub fn write_grid_pgm<W: Write>(grid: &OccupancyGrid2D, mut writer: W) -> Result<()> {
    let (w, h) = (grid.width(), grid.height());
    let [min_x, min_y] = grid.min_cell();
    writeln!(writer, "P2")?;
    writeln!(
        writer,
        "# cell_size {} origin {} {} min_cell {} {}",
        grid.cell_size(),
        grid.origin().x,
        grid.origin().y,
        min_x,
        min_y
    )?;
    writeln!(writer, "{w} {h}")?;
    writeln!(writer, "255")?;
    for r in 0..h {
        let y = min_y + (h - 1 - r) as i64;
        let row: Vec<&str> = (0..w)
            .map(|c| {
                if grid.is_occupied(&[min_x + c as i64, y]) {
                    "0"
                } else {
                    "255"
                }
            })
            .collect();
        writeln!(writer, "{}", row.join(" "))?;
    }
    writer.flush()?;
    Ok(())
}

/// Loads a 16-bit millimeter depth image as meters; zero pixels become NaN (invalid).
pub fn read_depth_pgm<R: BufRead>(reader: R) -> Result<(usize, usize, Vec<f64>)> {
    let img = read_pgm(reader)?;
    let depth = img
        .pixels
        .iter()
        .map(|&mm| if mm == 0 { f64::NAN } else { f64::from(mm) / 1000.0 })
        .collect();
    Ok((img.width, img.height, depth))
}

/// Writes depth in meters as a raw 16-bit P5 image in millimeters. Invalid,
/// non-positive or out-of-range (> 65.535 m) depths are written as 0.
pub fn write_depth_pgm<W: Write>(
    width: usize,
    height: usize,
    depth: &[f64],
    mut writer: W,
) -> Result<()> {
    if depth.len() != width * height {
        return Err(Error::invalid(format!(
            "{} depth values for a {width}x{height} image",
            depth.len()
        )));
    }
    write!(writer, "P5\n{width} {height}\n65535\n")?;
    for &d in depth {
        let mm = (d * 1000.0).round();
        let v = if d.is_finite() && mm >= 1.0 && mm <= f64::from(u16::MAX) {
            mm as u16
        } else {
            0
        };
        writer.write_all(&v.to_be_bytes())?;
    }
    writer.flush()?;
    Ok(())
}
