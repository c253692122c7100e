//! PLY persistence for colored clouds.
//!
//! Writes `binary_little_endian 1.0` with float32 `x y z`, uchar
//! `red green blue` and, when present, float32 `nx ny nz`. Reads binary
//! little-endian and ascii files with any property order; clouds without
//! color properties load as mid-gray and are flagged.

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use super::ColoredPointCloud;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} vertices, read {read}")]
    Truncated { expected: usize, read: usize },
    #[error("unsupported property `{name}` of type `{ty}`")]
    UnsupportedProperty { name: String, ty: String },
    #[error("unsupported format `{0}`")]
    UnsupportedFormat(String),
    #[error("bad vertex data: {0}")]
    BadData(String),
}

/// A loaded cloud plus whether colors were absent and defaulted to gray.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyCloud {
    pub cloud: ColoredPointCloud,
    pub colors_defaulted: bool,
}

pub const DEFAULT_GRAY: f64 = 0.5;

pub fn save_ply(cloud: &ColoredPointCloud, path: impl AsRef<Path>) -> Result<(), PlyError> {
    let mut buf = Vec::with_capacity(64 + cloud.len() * 27);
    write_ply(cloud, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_ply(cloud: &ColoredPointCloud, out: &mut impl Write) -> Result<(), PlyError> {
    let normals = cloud.normals();
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property float {axis}")?;
    }
    for ch in ["red", "green", "blue"] {
        writeln!(out, "property uchar {ch}")?;
    }
    if normals.is_some() {
        for axis in ["nx", "ny", "nz"] {
            writeln!(out, "property float {axis}")?;
        }
    }
    writeln!(out, "end_header")?;
    for i in 0..cloud.len() {
        for v in cloud.points()[i].iter() {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        for v in cloud.colors()[i].iter() {
            out.write_all(&[(v * 255.0).round().clamp(0.0, 255.0) as u8])?;
        }
        if let Some(n) = normals {
            for v in n[i].iter() {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(ty: &str) -> Option<Self> {
        Some(match ty {
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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Element {
    name: String,
    count: usize,
    /// (name, type); list properties are only allowed on non-vertex elements.
    props: Vec<(String, PropKind)>,
}

#[derive(Debug, Clone, Copy)]
enum PropKind {
    Scalar(Scalar),
    /// Only allowed after the vertex element, whose data is never read.
    List,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
}

fn parse_header(reader: &mut impl BufRead) -> Result<Header, PlyError> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool, PlyError> {
        line.clear();
        let n = reader.read_line(line)?;
        Ok(n > 0)
    };
    if !next(&mut line)? || line.trim_end() != "ply" {
        return Err(PlyError::MalformedHeader("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next(&mut line)? {
            return Err(PlyError::MalformedHeader("missing `end_header`".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", fmt, version] => {
                if *version != "1.0" {
                    return Err(PlyError::UnsupportedFormat(format!("{fmt} {version}")));
                }
                format = Some(match *fmt {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => return Err(PlyError::UnsupportedFormat(other.to_string())),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| PlyError::MalformedHeader(format!("bad element count `{count}`")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", count_ty, item_ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::MalformedHeader("property before element".into()))?;
                Scalar::parse(count_ty).ok_or_else(|| PlyError::UnsupportedProperty {
                    name: name.to_string(),
                    ty: count_ty.to_string(),
                })?;
                Scalar::parse(item_ty)
                    .ok_or_else(|| PlyError::UnsupportedProperty { name: name.to_string(), ty: item_ty.to_string() })?;
                el.props.push((name.to_string(), PropKind::List));
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::MalformedHeader("property before element".into()))?;
                let s = Scalar::parse(ty)
                    .ok_or_else(|| PlyError::UnsupportedProperty { name: name.to_string(), ty: ty.to_string() })?;
                el.props.push((name.to_string(), PropKind::Scalar(s)));
            }
            _ => return Err(PlyError::MalformedHeader(format!("unrecognized line `{}`", line.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| PlyError::MalformedHeader("missing `format` line".into()))?;
    Ok(Header { format, elements })
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PlyCloud, PlyError> {
    let bytes = fs::read(path)?;
    read_ply(&mut BufReader::new(Cursor::new(bytes)))
}

pub fn read_ply(reader: &mut impl BufRead) -> Result<PlyCloud, PlyError> {
    let header = parse_header(reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MalformedHeader("no `vertex` element".into()))?;
    if header.elements[..vertex_pos].iter().any(|e| e.count > 0) {
        return Err(PlyError::MalformedHeader("elements with data before `vertex` are not supported".into()));
    }
    let vertex = &header.elements[vertex_pos];
    let slot = |name: &str| vertex.props.iter().position(|(n, _)| n == name);
    let mut scalars = Vec::with_capacity(vertex.props.len());
    for (name, kind) in &vertex.props {
        match kind {
            PropKind::Scalar(s) => scalars.push(*s),
            PropKind::List => {
                return Err(PlyError::UnsupportedProperty { name: name.clone(), ty: "list".into() })
            }
        }
    }
    let xyz = match (slot("x"), slot("y"), slot("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(PlyError::MalformedHeader("vertex element lacks x/y/z".into())),
    };
    let rgb = match (slot("red"), slot("green"), slot("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        (None, None, None) => None,
        _ => return Err(PlyError::MalformedHeader("incomplete red/green/blue properties".into())),
    };
    let nrm = match (slot("nx"), slot("ny"), slot("nz")) {
        (Some(x), Some(y), Some(z)) => Some([x, y, z]),
        (None, None, None) => None,
        _ => return Err(PlyError::MalformedHeader("incomplete nx/ny/nz properties".into())),
    };
    for &i in xyz.iter().chain(nrm.iter().flatten()) {
        if scalars[i].is_integer() {
            return Err(PlyError::UnsupportedProperty { name: vertex.props[i].0.clone(), ty: format!("{:?}", scalars[i]) });
        }
    }
    let color_scale = |s: Scalar| match s {
        Scalar::U8 => Some(255.0),
        Scalar::U16 => Some(65535.0),
        Scalar::F32 | Scalar::F64 => Some(1.0),
        _ => None,
    };
    let rgb_scale = match rgb {
        Some(idx) => {
            let mut scale = [0.0; 3];
            for (k, &i) in idx.iter().enumerate() {
                scale[k] = color_scale(scalars[i]).ok_or_else(|| PlyError::UnsupportedProperty {
                    name: vertex.props[i].0.clone(),
                    ty: format!("{:?}", scalars[i]),
                })?;
            }
            Some(scale)
        }
        None => None,
    };

    let n = vertex.count;
    let mut values = vec![0.0f64; scalars.len()];
    let mut points = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut normals = nrm.map(|_| Vec::with_capacity(n));
    let stride: usize = scalars.iter().map(|s| s.size()).sum();
    let mut record = vec![0u8; stride];
    let mut text = String::new();
    for read in 0..n {
        match header.format {
            Format::BinaryLe => {
                if let Err(e) = reader.read_exact(&mut record) {
                    return Err(if e.kind() == std::io::ErrorKind::UnexpectedEof {
                        PlyError::Truncated { expected: n, read }
                    } else {
                        e.into()
                    });
                }
                let mut off = 0;
                for (v, s) in values.iter_mut().zip(&scalars) {
                    *v = s.decode(&record[off..off + s.size()]);
                    off += s.size();
                }
            }
            Format::Ascii => {
                text.clear();
                if reader.read_line(&mut text)? == 0 {
                    return Err(PlyError::Truncated { expected: n, read });
                }
                let mut tokens = text.split_whitespace();
                for v in values.iter_mut() {
                    let tok = tokens.next().ok_or(PlyError::Truncated { expected: n, read })?;
                    *v = tok.parse().map_err(|_| PlyError::BadData(format!("`{tok}` is not a number")))?;
                }
            }
        }
        points.push(Vector3::new(values[xyz[0]], values[xyz[1]], values[xyz[2]]));
        colors.push(match (rgb, rgb_scale) {
            (Some(idx), Some(scale)) => Vector3::new(
                (values[idx[0]] / scale[0]).clamp(0.0, 1.0),
                (values[idx[1]] / scale[1]).clamp(0.0, 1.0),
                (values[idx[2]] / scale[2]).clamp(0.0, 1.0),
            ),
            _ => Vector3::repeat(DEFAULT_GRAY),
        });
        if let (Some(idx), Some(out)) = (nrm, normals.as_mut()) {
            let v = Vector3::new(values[idx[0]], values[idx[1]], values[idx[2]]);
            let norm = v.norm();
            // f32 storage perturbs unit length slightly; restore it.
            out.push(if norm > 1e-6 { v / norm } else { Vector3::zeros() });
        }
    }
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(PlyError::BadData("non-finite coordinate".into()));
    }
    let cloud = ColoredPointCloud::from_parts_unchecked(points, colors, normals);
    Ok(PlyCloud { cloud, colors_defaulted: rgb.is_none() })
}
