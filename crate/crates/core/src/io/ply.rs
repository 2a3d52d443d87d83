//! Minimal PLY support: ASCII and binary little-endian vertex clouds.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::scene::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Fixed palette for labeled output; id `l` gets `PALETTE[l % 32]`.
pub const PALETTE: [[u8; 3]; 32] = [
    [128, 128, 128],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [255, 99, 71],
    [46, 139, 87],
    [106, 90, 205],
    [255, 165, 0],
    [72, 209, 204],
    [199, 21, 133],
    [154, 205, 50],
    [30, 144, 255],
    [218, 165, 32],
    [139, 69, 19],
    [0, 191, 255],
    [255, 20, 147],
];

pub fn palette_color(id: u32) -> [u8; 3] {
    PALETTE[id as usize % PALETTE.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
}

/// Points plus the optional per-point `instance` property.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub instances: Option<Vec<u32>>,
}

fn header_error(msg: impl Into<String>) -> Error {
    Error::PlyHeader(msg.into())
}

fn read_header(r: &mut impl BufRead) -> Result<Header> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<bool> {
        line.clear();
        Ok(r.read_line(line)? > 0)
    };
    if !next_line(&mut line)? || line.trim_end() != "ply" {
        return Err(header_error("missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next_line(&mut line)? {
            return Err(header_error("missing end_header"));
        }
        let mut words = line.split_whitespace();
        match words.next() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match (words.next(), words.next()) {
                    (Some("ascii"), Some("1.0")) => PlyFormat::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => PlyFormat::BinaryLittleEndian,
                    (f, _) => return Err(header_error(format!("unsupported format {}", f.unwrap_or("")))),
                });
            }
            Some("element") => {
                let (Some(name), Some(count)) = (words.next(), words.next()) else {
                    return Err(header_error("element line needs a name and a count"));
                };
                let count = count
                    .parse()
                    .map_err(|_| header_error(format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let Some(element) = elements.last_mut() else {
                    return Err(header_error("property before any element"));
                };
                let ty = words.next().ok_or_else(|| header_error("property without type"))?;
                let prop = if ty == "list" {
                    let (Some(c), Some(i), Some(_name)) = (words.next(), words.next(), words.next()) else {
                        return Err(header_error("incomplete list property"));
                    };
                    let count = Scalar::parse(c).ok_or_else(|| header_error(format!("unknown type '{c}'")))?;
                    let item = Scalar::parse(i).ok_or_else(|| header_error(format!("unknown type '{i}'")))?;
                    Property::List { count, item }
                } else {
                    let name = words.next().ok_or_else(|| header_error("property without name"))?;
                    let ty = Scalar::parse(ty).ok_or_else(|| header_error(format!("unknown type '{ty}'")))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(header_error(format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| header_error("missing format line"))?;
    Ok(Header { format, elements })
}

fn scalar_slot(element: &Element, name: &str) -> Option<usize> {
    element
        .properties
        .iter()
        .position(|p| matches!(p, Property::Scalar { name: n, .. } if n == name))
}

/// Read the `vertex` element of a PLY file.
pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    Ok(read_labeled_cloud(path)?.cloud)
}

pub fn read_labeled_cloud(path: impl AsRef<Path>) -> Result<LabeledCloud> {
    let mut r = BufReader::new(File::open(path)?);
    read_labeled_from(&mut r)
}

pub fn read_labeled_from(r: &mut impl BufRead) -> Result<LabeledCloud> {
    let header = read_header(r)?;
    let Some(vi) = header.elements.iter().position(|e| e.name == "vertex") else {
        return Err(Error::PlyMissingProperty("vertex".into()));
    };
    let vertex = &header.elements[vi];
    let mut slots = [0usize; 3];
    for (slot, axis) in slots.iter_mut().zip(["x", "y", "z"]) {
        *slot = scalar_slot(vertex, axis).ok_or_else(|| Error::PlyMissingProperty(axis.into()))?;
    }
    let instance_slot = scalar_slot(vertex, "instance");

    let mut points = Vec::with_capacity(vertex.count);
    let mut instances = instance_slot.map(|_| Vec::with_capacity(vertex.count));
    let mut values = vec![0.0f64; vertex.properties.len()];
    match header.format {
        PlyFormat::Ascii => {
            let mut line = String::new();
            for (ei, element) in header.elements.iter().enumerate() {
                for row in 0..element.count {
                    line.clear();
                    if r.read_line(&mut line)? == 0 {
                        return Err(Error::PlyTruncated(format!(
                            "{} row {row} of {}",
                            element.name, element.count
                        )));
                    }
                    if ei != vi {
                        continue;
                    }
                    let mut words = line.split_whitespace();
                    for (k, v) in values.iter_mut().enumerate() {
                        let word = words.next().ok_or_else(|| {
                            Error::PlyTruncated(format!("vertex row {row} has fewer than {} values", k + 1))
                        })?;
                        let bad = |_| Error::PlyHeader(format!("vertex row {row}: bad number '{word}'"));
                        *v = match vertex.properties[k] {
                            Property::Scalar { ty: Scalar::F32, .. } => word.parse::<f32>().map_err(bad)? as f64,
                            _ => word.parse::<f64>().map_err(bad)?,
                        };
                    }
                    push_vertex(&values, &slots, instance_slot, &mut points, &mut instances);
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut buf = [0u8; 8];
            for (ei, element) in header.elements.iter().enumerate() {
                for row in 0..element.count {
                    let truncated = || Error::PlyTruncated(format!("{} row {row} of {}", element.name, element.count));
                    for (k, prop) in element.properties.iter().enumerate() {
                        match *prop {
                            Property::Scalar { ty, .. } => {
                                r.read_exact(&mut buf[..ty.size()]).map_err(|_| truncated())?;
                                if let Some(v) = values.get_mut(k) {
                                    *v = ty.decode_le(&buf);
                                }
                            }
                            Property::List { count, item } => {
                                r.read_exact(&mut buf[..count.size()]).map_err(|_| truncated())?;
                                let n = count.decode_le(&buf) as usize;
                                let mut skip = vec![0u8; n * item.size()];
                                r.read_exact(&mut skip).map_err(|_| truncated())?;
                            }
                        }
                    }
                    if ei == vi {
                        push_vertex(&values, &slots, instance_slot, &mut points, &mut instances);
                    }
                }
            }
        }
    }
    Ok(LabeledCloud {
        cloud: PointCloud::new(points),
        instances,
    })
}

fn push_vertex(
    values: &[f64],
    slots: &[usize; 3],
    instance_slot: Option<usize>,
    points: &mut Vec<Point3<f64>>,
    instances: &mut Option<Vec<u32>>,
) {
    points.push(Point3::new(values[slots[0]], values[slots[1]], values[slots[2]]));
    if let (Some(s), Some(ids)) = (instance_slot, instances.as_mut()) {
        ids.push(values[s] as u32);
    }
}

/// Write `cloud` as PLY with 32-bit float coordinates. With `instances`,
/// each vertex also gets a `uint instance` and palette RGB.
pub fn write_point_cloud(
    path: impl AsRef<Path>,
    cloud: &PointCloud,
    instances: Option<&[u32]>,
    format: PlyFormat,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_point_cloud_to(&mut w, cloud, instances, format)?;
    w.flush()?;
    Ok(())
}

pub fn write_point_cloud_to(
    w: &mut impl Write,
    cloud: &PointCloud,
    instances: Option<&[u32]>,
    format: PlyFormat,
) -> Result<()> {
    if let Some(ids) = instances {
        if ids.len() != cloud.len() {
            return Err(Error::InvalidParameter(format!(
                "{} instance ids for {} points",
                ids.len(),
                cloud.len()
            )));
        }
    }
    let format_name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {format_name} 1.0\nelement vertex {}", cloud.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    if instances.is_some() {
        writeln!(
            w,
            "property uint instance\nproperty uchar red\nproperty uchar green\nproperty uchar blue"
        )?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.iter().enumerate() {
        let xyz = [p.x as f32, p.y as f32, p.z as f32];
        let label = instances.map(|ids| ids[i]);
        match format {
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", xyz[0], xyz[1], xyz[2])?;
                if let Some(id) = label {
                    let [r, g, b] = palette_color(id);
                    write!(w, " {id} {r} {g} {b}")?;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for c in xyz {
                    w.write_all(&c.to_le_bytes())?;
                }
                if let Some(id) = label {
                    w.write_all(&id.to_le_bytes())?;
                    w.write_all(&palette_color(id))?;
                }
            }
        }
    }
    Ok(())
}
