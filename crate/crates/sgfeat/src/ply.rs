//! PLY reading and writing: ASCII and binary little-endian, x/y/z vertex
//! properties, plus edge elements for correspondence export.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cloud::CloudLevel;
use crate::error::{Error, Result};
use crate::{Point3, PointCloud, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(token: &str) -> Option<Self> {
        Some(match token {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(ScalarType),
    List(ScalarType, ScalarType),
}

#[derive(Debug, Clone)]
struct PropertySpec {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct ElementSpec {
    name: String,
    count: usize,
    properties: Vec<PropertySpec>,
}

/// Reads the x/y/z coordinates of the vertex element. Other elements and
/// properties are skipped (non-float extras with a warning).
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    let (format, elements, body_start, header_lines) = parse_header(&bytes)?;
    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::ParseError {
            line: header_lines,
            message: "no vertex element".into(),
        })?;
    for prop in &vertex.properties {
        let relevant = matches!(prop.name.as_str(), "x" | "y" | "z");
        match &prop.kind {
            PropKind::Scalar(t) if relevant && !t.is_float() => {
                return Err(Error::ParseError {
                    line: header_lines,
                    message: format!("vertex property {} must be float typed", prop.name),
                });
            }
            PropKind::List(_, _) if relevant => {
                return Err(Error::ParseError {
                    line: header_lines,
                    message: format!("vertex property {} cannot be a list", prop.name),
                });
            }
            PropKind::Scalar(t) if !relevant && !t.is_float() => {
                log::warn!("skipping unsupported vertex property {}", prop.name);
            }
            _ => {}
        }
    }
    let find = |name: &str| vertex.properties.iter().position(|p| p.name == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::ParseError {
                line: header_lines,
                message: "vertex element lacks x/y/z properties".into(),
            })
        }
    };

    let points = match format {
        PlyFormat::Ascii => {
            read_ascii_vertices(&bytes[body_start..], &elements, vertex, ix, iy, iz, header_lines)?
        }
        PlyFormat::BinaryLittleEndian => {
            read_binary_vertices(&bytes[body_start..], &elements, vertex, ix, iy, iz, header_lines)?
        }
    };
    for p in &points {
        if !p.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::ParseError {
                line: header_lines,
                message: "non-finite vertex coordinate".into(),
            });
        }
    }
    Ok(PointCloud::new(points, CloudLevel::Dense))
}

fn parse_header(bytes: &[u8]) -> Result<(PlyFormat, Vec<ElementSpec>, usize, usize)> {
    let mut format = None;
    let mut elements: Vec<ElementSpec> = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut seen_magic = false;

    loop {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| offset + p)
            .ok_or(Error::ParseError {
                line: line_no + 1,
                message: "header not terminated by end_header".into(),
            })?;
        let line = std::str::from_utf8(&bytes[offset..end])
            .map_err(|_| Error::ParseError {
                line: line_no + 1,
                message: "header is not valid UTF-8".into(),
            })?
            .trim_end_matches('\r');
        offset = end + 1;
        line_no += 1;

        let tokens: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line.trim() != "ply" {
                return Err(Error::ParseError {
                    line: 1,
                    message: "missing ply magic".into(),
                });
            }
            seen_magic = true;
            continue;
        }
        match tokens.first().copied() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = Some(match tokens.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(Error::ParseError {
                            line: line_no,
                            message: format!("unsupported format {other:?}"),
                        })
                    }
                });
            }
            Some("element") => {
                let (name, count) = match (tokens.get(1), tokens.get(2)) {
                    (Some(name), Some(count)) => (
                        name.to_string(),
                        count.parse::<usize>().map_err(|_| Error::ParseError {
                            line: line_no,
                            message: format!("bad element count {count}"),
                        })?,
                    ),
                    _ => {
                        return Err(Error::ParseError {
                            line: line_no,
                            message: "malformed element line".into(),
                        })
                    }
                };
                elements.push(ElementSpec {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or(Error::ParseError {
                    line: line_no,
                    message: "property before any element".into(),
                })?;
                if tokens.get(1) == Some(&"list") {
                    let (count_t, elem_t, name) =
                        match (tokens.get(2), tokens.get(3), tokens.get(4)) {
                            (Some(a), Some(b), Some(n)) => (
                                ScalarType::parse(a),
                                ScalarType::parse(b),
                                n.to_string(),
                            ),
                            _ => {
                                return Err(Error::ParseError {
                                    line: line_no,
                                    message: "malformed list property".into(),
                                })
                            }
                        };
                    match (count_t, elem_t) {
                        (Some(c), Some(e)) => element.properties.push(PropertySpec {
                            name,
                            kind: PropKind::List(c, e),
                        }),
                        _ => {
                            return Err(Error::ParseError {
                                line: line_no,
                                message: "unknown list property types".into(),
                            })
                        }
                    }
                } else {
                    let (ty, name) = match (tokens.get(1), tokens.get(2)) {
                        (Some(t), Some(n)) => (ScalarType::parse(t), n.to_string()),
                        _ => {
                            return Err(Error::ParseError {
                                line: line_no,
                                message: "malformed property line".into(),
                            })
                        }
                    };
                    match ty {
                        Some(t) => element.properties.push(PropertySpec {
                            name,
                            kind: PropKind::Scalar(t),
                        }),
                        None => {
                            return Err(Error::ParseError {
                                line: line_no,
                                message: format!("unknown property type in '{line}'"),
                            })
                        }
                    }
                }
            }
            Some("end_header") => {
                let format = format.ok_or(Error::ParseError {
                    line: line_no,
                    message: "no format line before end_header".into(),
                })?;
                if !seen_magic {
                    return Err(Error::ParseError {
                        line: 1,
                        message: "missing ply magic".into(),
                    });
                }
                return Ok((format, elements, offset, line_no));
            }
            Some(other) => {
                return Err(Error::ParseError {
                    line: line_no,
                    message: format!("unexpected header keyword {other}"),
                })
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn read_ascii_vertices(
    body: &[u8],
    elements: &[ElementSpec],
    _vertex: &ElementSpec,
    ix: usize,
    iy: usize,
    iz: usize,
    header_lines: usize,
) -> Result<Vec<Point3>> {
    let text = std::str::from_utf8(body).map_err(|_| Error::ParseError {
        line: header_lines + 1,
        message: "ascii body is not valid UTF-8".into(),
    })?;
    // Token stream with line tracking.
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            tokens.push((header_lines + 1 + k, tok));
        }
    }
    let mut cursor = 0usize;
    let mut next = |what: &str| -> Result<(usize, &str)> {
        let t = tokens.get(cursor).copied().ok_or(Error::ParseError {
            line: header_lines + 1 + text.lines().count(),
            message: format!("unexpected end of data while reading {what}"),
        })?;
        cursor += 1;
        Ok(t)
    };

    let mut points = Vec::new();
    for element in elements {
        for row in 0..element.count {
            let mut coords = [0.0f64; 3];
            for (p_idx, prop) in element.properties.iter().enumerate() {
                match &prop.kind {
                    PropKind::Scalar(_) => {
                        let (line, tok) = next(&element.name)?;
                        if element.name == "vertex" {
                            let want = [ix, iy, iz].iter().position(|&w| w == p_idx);
                            if let Some(axis) = want {
                                coords[axis] =
                                    tok.parse::<f64>().map_err(|_| Error::ParseError {
                                        line,
                                        message: format!("bad float token {tok}"),
                                    })?;
                            }
                        }
                    }
                    PropKind::List(_, _) => {
                        let (line, tok) = next(&element.name)?;
                        let count: usize = tok.parse().map_err(|_| Error::ParseError {
                            line,
                            message: format!("bad list count {tok}"),
                        })?;
                        for _ in 0..count {
                            next(&element.name)?;
                        }
                    }
                }
            }
            if element.name == "vertex" {
                points.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            let _ = row;
        }
    }
    Ok(points)
}

#[allow(clippy::too_many_arguments)]
fn read_binary_vertices(
    body: &[u8],
    elements: &[ElementSpec],
    vertex: &ElementSpec,
    ix: usize,
    iy: usize,
    iz: usize,
    header_lines: usize,
) -> Result<Vec<Point3>> {
    let mut cursor = 0usize;
    let eof = |cursor: usize| Error::ParseError {
        line: header_lines,
        message: format!("binary body truncated at byte {cursor}"),
    };
    let read_scalar = |cursor: &mut usize, t: ScalarType| -> Result<f64> {
        let size = t.size();
        if *cursor + size > body.len() {
            return Err(eof(*cursor));
        }
        let raw = &body[*cursor..*cursor + size];
        *cursor += size;
        Ok(match t {
            ScalarType::I8 => raw[0] as i8 as f64,
            ScalarType::U8 => raw[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([raw[0], raw[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([raw[0], raw[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(raw.try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(raw.try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(raw.try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(raw.try_into().unwrap()),
        })
    };

    let mut points = Vec::new();
    for element in elements {
        for _ in 0..element.count {
            let mut coords = [0.0f64; 3];
            for (p_idx, prop) in element.properties.iter().enumerate() {
                match &prop.kind {
                    PropKind::Scalar(t) => {
                        let value = read_scalar(&mut cursor, *t)?;
                        if element.name == "vertex" {
                            if p_idx == ix {
                                coords[0] = value;
                            } else if p_idx == iy {
                                coords[1] = value;
                            } else if p_idx == iz {
                                coords[2] = value;
                            }
                        }
                    }
                    PropKind::List(count_t, elem_t) => {
                        let count = read_scalar(&mut cursor, *count_t)? as usize;
                        let skip = count * elem_t.size();
                        if cursor + skip > body.len() {
                            return Err(eof(cursor));
                        }
                        cursor += skip;
                    }
                }
            }
            if element.name == "vertex" {
                points.push(Point3::new(coords[0], coords[1], coords[2]));
            }
        }
    }
    let _ = vertex;
    Ok(points)
}

/// Writes a cloud with double-precision x/y/z. Binary round-trips exactly;
/// ASCII keeps nine significant digits.
pub fn write_ply(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    let mut out = fs::File::create(path)?;
    let format_line = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {format_line} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )?;
    match format {
        PlyFormat::Ascii => {
            let mut buf = String::new();
            for p in cloud.points() {
                buf.push_str(&format!("{:.8e} {:.8e} {:.8e}\n", p.x, p.y, p.z));
            }
            out.write_all(buf.as_bytes())?;
        }
        PlyFormat::BinaryLittleEndian => {
            let mut buf = Vec::with_capacity(cloud.len() * 24);
            for p in cloud.points() {
                buf.extend_from_slice(&p.x.to_le_bytes());
                buf.extend_from_slice(&p.y.to_le_bytes());
                buf.extend_from_slice(&p.z.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Writes both clouds into one PLY (target offset for side-by-side viewing)
/// with one edge element per correspondence.
pub fn write_correspondence_ply(
    source: &PointCloud,
    target: &PointCloud,
    target_offset: &Vector3,
    edges: &[(usize, usize)],
    path: &Path,
) -> Result<()> {
    let mut out = fs::File::create(path)?;
    let n = source.len() + target.len();
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {n}\nproperty double x\nproperty double y\nproperty double z\nelement edge {}\nproperty int vertex1\nproperty int vertex2\nend_header\n",
        edges.len()
    )?;
    let mut buf = Vec::with_capacity(n * 24 + edges.len() * 8);
    for p in source.points() {
        buf.extend_from_slice(&p.x.to_le_bytes());
        buf.extend_from_slice(&p.y.to_le_bytes());
        buf.extend_from_slice(&p.z.to_le_bytes());
    }
    for p in target.points() {
        buf.extend_from_slice(&(p.x + target_offset.x).to_le_bytes());
        buf.extend_from_slice(&(p.y + target_offset.y).to_le_bytes());
        buf.extend_from_slice(&(p.z + target_offset.z).to_le_bytes());
    }
    for &(i, j) in edges {
        buf.extend_from_slice(&(i as i32).to_le_bytes());
        buf.extend_from_slice(&((source.len() + j) as i32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}
