//! ASCII PCD v0.7.
//!
//! Recognized fields: `x y z` (required), `rgb`/`rgba` (packed `0x00RRGGBB`,
//! either as a float bit pattern or an unsigned integer) and `frame` (index of
//! the observing pose, `-1` for none). Other fields are read and ignored.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::types::{MapPoint, PointCloud, Rgb, Vec3};

use super::{numbered_lines, parse_f64};

#[derive(Debug, Clone, Copy, PartialEq)]
enum FieldType {
    Float,
    Signed,
    Unsigned,
}

#[derive(Debug)]
struct Field {
    name: String,
    kind: FieldType,
    count: usize,
    /// Column of the first element in a data row.
    column: usize,
}

#[derive(Debug, Default)]
struct Header {
    fields: Option<Vec<String>>,
    sizes: Option<Vec<usize>>,
    types: Option<Vec<FieldType>>,
    counts: Option<Vec<usize>>,
    width: Option<usize>,
    height: Option<usize>,
    points: Option<usize>,
}

pub fn parse_pcd<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut lines = numbered_lines(reader);
    let mut header = Header::default();
    let mut saw_data = false;

    for entry in lines.by_ref() {
        let (line, text) = entry?;
        let text = text.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let mut tokens = text.split_whitespace();
        let key = tokens.next().unwrap_or_default();
        let values: Vec<&str> = tokens.collect();
        match key.to_ascii_uppercase().as_str() {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => header.fields = Some(values.iter().map(|s| s.to_string()).collect()),
            "SIZE" => header.sizes = Some(parse_usizes("SIZE", &values)?),
            "TYPE" => {
                header.types = Some(
                    values
                        .iter()
                        .map(|t| match *t {
                            "F" => Ok(FieldType::Float),
                            "I" => Ok(FieldType::Signed),
                            "U" => Ok(FieldType::Unsigned),
                            other => Err(Error::pcd("TYPE", format!("unknown type `{other}`"))),
                        })
                        .collect::<Result<_>>()?,
                )
            }
            "COUNT" => header.counts = Some(parse_usizes("COUNT", &values)?),
            "WIDTH" => header.width = Some(single_usize("WIDTH", &values)?),
            "HEIGHT" => header.height = Some(single_usize("HEIGHT", &values)?),
            "POINTS" => header.points = Some(single_usize("POINTS", &values)?),
            "DATA" => {
                match values.as_slice() {
                    ["ascii"] => {}
                    [kind] => {
                        return Err(Error::pcd(
                            "DATA",
                            format!("`{kind}` encoding is not supported, only ascii"),
                        ))
                    }
                    _ => return Err(Error::pcd("DATA", "expected a single encoding")),
                }
                saw_data = true;
                break;
            }
            _ => return Err(Error::parse(line, format!("unknown PCD header key `{key}`"))),
        }
    }
    if !saw_data {
        return Err(Error::pcd("DATA", "missing"));
    }

    let (fields, expected_points) = header.resolve()?;
    let columns: usize = fields.iter().map(|f| f.count).sum();
    let find = |name: &str| fields.iter().find(|f| f.name == name);
    let (x, y, z) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x.column, y.column, z.column),
        _ => return Err(Error::pcd("FIELDS", "x, y and z are required")),
    };
    let rgb = find("rgb").or_else(|| find("rgba"));
    let frame = find("frame");

    let mut points = Vec::with_capacity(expected_points.min(1 << 24));
    for entry in lines {
        let (line, text) = entry?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() != columns {
            return Err(Error::parse(
                line,
                format!("expected {columns} values per row, found {}", tokens.len()),
            ));
        }
        if points.len() == expected_points {
            return Err(Error::pcd(
                "POINTS",
                format!("declares {expected_points} points but the body has more"),
            ));
        }
        let coord = |c: usize| parse_f64(tokens[c], line, "coordinate");
        let mut point = MapPoint::at(Vec3::new(coord(x)?, coord(y)?, coord(z)?));
        if let Some(f) = rgb {
            point.color = Some(unpack_rgb(tokens[f.column], f.kind, line)?);
        }
        if let Some(f) = frame {
            let v = parse_f64(tokens[f.column], line, "frame")?;
            if v.fract() != 0.0 || v < -1.0 {
                return Err(Error::parse(line, format!("frame `{v}` is not an index")));
            }
            point.frame_id = (v >= 0.0).then_some(v as usize);
        }
        points.push(point);
    }
    if points.len() != expected_points {
        return Err(Error::pcd(
            "POINTS",
            format!(
                "declares {expected_points} points but the body has {}",
                points.len()
            ),
        ));
    }
    PointCloud::new(points)
}

impl Header {
    fn resolve(self) -> Result<(Vec<Field>, usize)> {
        let names = self.fields.ok_or_else(|| Error::pcd("FIELDS", "missing"))?;
        if names.is_empty() {
            return Err(Error::pcd("FIELDS", "empty"));
        }
        let n = names.len();
        if let Some(sizes) = &self.sizes {
            if sizes.len() != n {
                return Err(Error::pcd("SIZE", format!("expected {n} entries")));
            }
        }
        let counts = self.counts.unwrap_or_else(|| vec![1; n]);
        if counts.len() != n || counts.contains(&0) {
            return Err(Error::pcd("COUNT", format!("expected {n} positive entries")));
        }
        let types = self.types.unwrap_or_else(|| vec![FieldType::Float; n]);
        if types.len() != n {
            return Err(Error::pcd("TYPE", format!("expected {n} entries")));
        }
        let points = match (self.points, self.width, self.height) {
            (Some(p), Some(w), Some(h)) if w.checked_mul(h) != Some(p) => {
                return Err(Error::pcd(
                    "POINTS",
                    format!("{p} does not equal WIDTH*HEIGHT = {w}*{h}"),
                ))
            }
            (Some(p), _, _) => p,
            (None, Some(w), h) => w
                .checked_mul(h.unwrap_or(1))
                .ok_or_else(|| Error::pcd("WIDTH", "overflow"))?,
            (None, None, _) => return Err(Error::pcd("POINTS", "missing")),
        };
        let mut column = 0;
        let fields = names
            .into_iter()
            .zip(types)
            .zip(counts)
            .map(|((name, kind), count)| {
                let f = Field {
                    name,
                    kind,
                    count,
                    column,
                };
                column += count;
                f
            })
            .collect();
        Ok((fields, points))
    }
}

fn parse_usizes(key: &'static str, values: &[&str]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|v| {
            v.parse()
                .map_err(|_| Error::pcd(key, format!("`{v}` is not a non-negative integer")))
        })
        .collect()
}

fn single_usize(key: &'static str, values: &[&str]) -> Result<usize> {
    match parse_usizes(key, values)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(Error::pcd(key, "expected a single value")),
    }
}

/// Packs a color PCL-style: `0x00RRGGBB` reinterpreted as an `f32`.
pub(crate) fn pack_rgb(c: Rgb) -> f32 {
    f32::from_bits(u32::from(c[0]) << 16 | u32::from(c[1]) << 8 | u32::from(c[2]))
}

fn unpack_bits(bits: u32) -> Rgb {
    [(bits >> 16) as u8, (bits >> 8) as u8, bits as u8]
}

fn unpack_rgb(token: &str, kind: FieldType, line: usize) -> Result<Rgb> {
    let bits = match kind {
        FieldType::Float => token
            .parse::<f32>()
            .map(f32::to_bits)
            .map_err(|_| Error::parse(line, format!("rgb `{token}` is not a float"))),
        FieldType::Unsigned | FieldType::Signed => token
            .parse::<u32>()
            .or_else(|_| token.parse::<i32>().map(|v| v as u32))
            .map_err(|_| Error::parse(line, format!("rgb `{token}` is not an integer"))),
    }?;
    Ok(unpack_bits(bits))
}

/// Writes ASCII PCD with `x y z` as 8-byte floats. `rgb` is emitted when any
/// point has a color (uncolored points are written black) and `frame` when any
/// point has a frame tag (untagged points are written as `-1`).
pub fn write_pcd<W: Write>(cloud: &PointCloud, mut writer: W) -> Result<()> {
    let colors = cloud.has_colors();
    let frames = cloud.has_frames();
    let (mut fields, mut sizes, mut types) = (vec!["x", "y", "z"], vec!["8"; 3], vec!["F"; 3]);
    if colors {
        fields.push("rgb");
        sizes.push("4");
        types.push("F");
    }
    if frames {
        fields.push("frame");
        sizes.push("4");
        types.push("I");
    }
    let n = cloud.len();
    writeln!(writer, "# .PCD v0.7 - Point Cloud Data file format")?;
    writeln!(writer, "VERSION 0.7")?;
    writeln!(writer, "FIELDS {}", fields.join(" "))?;
    writeln!(writer, "SIZE {}", sizes.join(" "))?;
    writeln!(writer, "TYPE {}", types.join(" "))?;
    writeln!(writer, "COUNT {}", vec!["1"; fields.len()].join(" "))?;
    writeln!(writer, "WIDTH {n}")?;
    writeln!(writer, "HEIGHT 1")?;
    writeln!(writer, "VIEWPOINT 0 0 0 1 0 0 0")?;
    writeln!(writer, "POINTS {n}")?;
    writeln!(writer, "DATA ascii")?;
    for p in cloud.iter() {
        write!(writer, "{} {} {}", p.position.x, p.position.y, p.position.z)?;
        if colors {
            write!(writer, " {:e}", pack_rgb(p.color.unwrap_or([0, 0, 0])))?;
        }
        if frames {
            match p.frame_id {
                Some(f) => write!(writer, " {f}")?,
                None => write!(writer, " -1")?,
            }
        }
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(fields: &str, types: &str, points: usize, body: &str) -> String {
        let n = fields.split_whitespace().count();
        format!(
            "VERSION 0.7\nFIELDS {fields}\nSIZE {}\nTYPE {types}\nCOUNT {}\nWIDTH {points}\nHEIGHT 1\nPOINTS {points}\nDATA ascii\n{body}",
            vec!["4"; n].join(" "),
            vec!["1"; n].join(" "),
        )
    }

    #[test]
    fn minimal_document() {
        let c = parse_pcd(doc("x y z", "F F F", 1, "1 2 3\n").as_bytes()).unwrap();
        assert_eq!(c.points(), &[MapPoint::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn packed_float_red() {
        // Oracle: 0x00FF0000 as f32 bits.
        let red = f32::from_bits(0x00FF_0000);
        assert_eq!(red.to_bits() >> 16 & 0xff, 0xff);
        let body = format!("0 0 0 {red:e}\n");
        let c = parse_pcd(doc("x y z rgb", "F F F F", 1, &body).as_bytes()).unwrap();
        assert_eq!(c.points()[0].color, Some([255, 0, 0]));
        assert_eq!(pack_rgb([255, 0, 0]).to_bits(), 0x00FF_0000);
    }

    #[test]
    fn unsigned_rgb_field() {
        let body = format!("0 0 0 {}\n", 0x0012_3456u32);
        let c = parse_pcd(doc("x y z rgb", "F F F U", 1, &body).as_bytes()).unwrap();
        assert_eq!(c.points()[0].color, Some([0x12, 0x34, 0x56]));
    }

    #[test]
    fn extra_fields_and_counts_are_skipped() {
        let text = "FIELDS normal x y z\nCOUNT 3 1 1 1\nPOINTS 1\nDATA ascii\n9 9 9 1 2 3\n";
        let c = parse_pcd(text.as_bytes()).unwrap();
        assert_eq!(c.points()[0].position, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn binary_data_rejected() {
        let text = doc("x y z", "F F F", 1, "").replace("DATA ascii", "DATA binary");
        let err = parse_pcd(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::PcdHeader { key: "DATA", .. }), "{err}");
    }

    #[test]
    fn point_count_mismatch_names_points() {
        for (declared, body) in [(2, "1 2 3\n"), (1, "1 2 3\n4 5 6\n")] {
            let err = parse_pcd(doc("x y z", "F F F", declared, body).as_bytes()).unwrap_err();
            assert!(matches!(err, Error::PcdHeader { key: "POINTS", .. }), "{err}");
        }
    }

    #[test]
    fn missing_header_keys_are_named() {
        let err = parse_pcd("POINTS 0\nDATA ascii\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::PcdHeader { key: "FIELDS", .. }));
        let err = parse_pcd("FIELDS x y\nPOINTS 0\nDATA ascii\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::PcdHeader { key: "FIELDS", .. }));
        let err = parse_pcd("FIELDS x y z\nDATA ascii\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::PcdHeader { key: "POINTS", .. }));
        let err = parse_pcd("FIELDS x y z\nPOINTS 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::PcdHeader { key: "DATA", .. }));
    }

    #[test]
    fn empty_cloud_document() {
        let mut out = Vec::new();
        write_pcd(&PointCloud::default(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("\nPOINTS 0\n"));
        assert!(text.contains("\nFIELDS x y z\n"));
        assert!(parse_pcd(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn uncolored_cloud_has_no_rgb_field() {
        let cloud = PointCloud::new(vec![MapPoint::new(1.0, 2.0, 3.0)]).unwrap();
        let mut out = Vec::new();
        write_pcd(&cloud, &mut out).unwrap();
        assert!(!String::from_utf8(out).unwrap().contains("rgb"));
    }

    #[test]
    fn frame_tags_round_trip() {
        let cloud = PointCloud::new(vec![
            MapPoint::new(1.0, 2.0, 3.0).with_frame(4),
            MapPoint::new(0.0, 0.0, 0.0),
        ])
        .unwrap();
        let mut out = Vec::new();
        write_pcd(&cloud, &mut out).unwrap();
        assert_eq!(parse_pcd(&out[..]).unwrap(), cloud);
    }

    pub(crate) fn cloud() -> impl Strategy<Value = PointCloud> {
        (any::<bool>(), any::<bool>()).prop_flat_map(|(colored, framed)| {
            prop::collection::vec(
                (
                    prop::array::uniform3(-1e3f64..1e3),
                    any::<[u8; 3]>(),
                    0usize..10_000,
                ),
                0..60,
            )
            .prop_map(move |raw| {
                PointCloud::new(
                    raw.into_iter()
                        .map(|(p, c, f)| MapPoint {
                            position: Vec3::from(p),
                            color: colored.then_some(c),
                            frame_id: framed.then_some(f),
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
            write_pcd(&c, &mut out).unwrap();
            prop_assert_eq!(parse_pcd(&out[..]).unwrap(), c);
        }
    }
}
