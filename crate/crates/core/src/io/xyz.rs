use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::types::{MapPoint, PointCloud, Vec3};

use super::{numbered_lines, parse_f64};

/// Parses `x y z` or `x y z r g b` lines (colors as integers 0-255). All data
/// lines must have the same layout; `#` comments and blank lines are skipped.
pub fn parse_xyz<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut layout: Option<usize> = None;
    let mut points = Vec::new();
    for entry in numbered_lines(reader) {
        let (line, text) = entry?;
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let n = tokens.len();
        if n != 3 && n != 6 {
            return Err(Error::parse(line, format!("expected 3 or 6 fields, found {n}")));
        }
        match layout {
            None => layout = Some(n),
            Some(expected) if expected != n => {
                return Err(Error::parse(
                    line,
                    format!("found {n} fields after {expected}-field lines"),
                ))
            }
            Some(_) => {}
        }
        let coord = |i: usize| parse_f64(tokens[i], line, "coordinate");
        let mut point = MapPoint::at(Vec3::new(coord(0)?, coord(1)?, coord(2)?));
        if n == 6 {
            let mut rgb = [0u8; 3];
            for (slot, token) in rgb.iter_mut().zip(&tokens[3..]) {
                *slot = token.parse().map_err(|_| {
                    Error::parse(line, format!("color `{token}` is not in 0..=255"))
                })?;
            }
            point.color = Some(rgb);
        }
        points.push(point);
    }
    PointCloud::new(points)
}

/// Writes one point per line; colors are emitted for every point when any point has one.
pub fn write_xyz<W: Write>(cloud: &PointCloud, mut writer: W) -> Result<()> {
    let colors = cloud.has_colors();
    for p in cloud.iter() {
        let v = p.position;
        if colors {
            let [r, g, b] = p.color.unwrap_or([0, 0, 0]);
            writeln!(writer, "{} {} {} {r} {g} {b}", v.x, v.y, v.z)?;
        } else {
            writeln!(writer, "{} {} {}", v.x, v.y, v.z)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_point() {
        let c = parse_xyz("0 0 0".as_bytes()).unwrap();
        assert_eq!(c.points(), &[MapPoint::new(0.0, 0.0, 0.0)]);
    }

    #[test]
    fn colored_points() {
        let c = parse_xyz("1 2 3 255 0 7\n".as_bytes()).unwrap();
        assert_eq!(c.points()[0].color, Some([255, 0, 7]));
    }

    #[test]
    fn mixed_layouts_rejected() {
        let err = parse_xyz("0 0 0\n1 1 1 1 2 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn bad_field_count_and_color() {
        assert!(matches!(
            parse_xyz("0 0\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_xyz("# c\n0 0 0 256 0 0\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    fn cloud() -> impl Strategy<Value = PointCloud> {
        any::<bool>().prop_flat_map(|colored| {
            prop::collection::vec((prop::array::uniform3(-1e3f64..1e3), any::<[u8; 3]>()), 0..60)
                .prop_map(move |raw| {
                    PointCloud::new(
                        raw.into_iter()
                            .map(|(p, c)| MapPoint {
                                position: Vec3::from(p),
                                color: colored.then_some(c),
                                frame_id: None,
                            })
                            .collect(),
                    )
                    .unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn write_then_parse_is_identity(c in cloud()) {
            let mut out = Vec::new();
            write_xyz(&c, &mut out).unwrap();
            prop_assert_eq!(parse_xyz(&out[..]).unwrap(), c);
        }
    }
}
