//! PLY point clouds, `ascii 1.0` and `binary_little_endian 1.0`.
//!
//! Only the `vertex` element is decoded. Its `x`, `y`, `z` properties must
//! be `float` or `double`; `red`, `green`, `blue`, when all three are
//! present, must be `uchar`. Other vertex properties and other elements
//! (including list properties) are skipped. Big-endian files are refused.
//!
//! The writer always emits `double` coordinates so binary round trips are
//! bit-exact, and records the cloud frame as a `comment frame <id>` line.

use crate::error::{Error, Result};
use crate::model::{PointCloud, Rgb, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, ScalarType::F32 | ScalarType::F64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlyProperty {
    Scalar { name: String, ty: ScalarType },
    List { name: String, count: ScalarType, item: ScalarType },
}

impl PlyProperty {
    pub fn name(&self) -> &str {
        match self {
            PlyProperty::Scalar { name, .. } | PlyProperty::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlyElement {
    pub name: String,
    pub count: usize,
    pub properties: Vec<PlyProperty>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlyHeader {
    pub format: PlyFormat,
    pub elements: Vec<PlyElement>,
    pub frame_id: Option<String>,
    /// Byte offset of the payload.
    pub body_offset: usize,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Ply(msg.into())
}

/// Parses and validates the header. The vertex element must exist with
/// `x`, `y`, `z` as `float`/`double`.
pub fn parse_ply_header(bytes: &[u8]) -> Result<PlyHeader> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<&str> {
        let rest = bytes.get(pos..).unwrap_or_default();
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err("header is not terminated by `end_header`"))?;
        pos += end + 1;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| err("header is not ASCII"))?;
        Ok(line.trim_end_matches('\r'))
    };

    if next_line()?.trim() != "ply" {
        return Err(err("missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut frame_id = None;
    loop {
        let line = next_line()?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] => continue,
            ["end_header"] => break,
            ["format", kind, version] => {
                if *version != "1.0" {
                    return Err(err(format!("unsupported version {version}")));
                }
                format = Some(match *kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => return Err(err("binary_big_endian is not supported")),
                    other => return Err(err(format!("unknown format `{other}`"))),
                });
            }
            ["comment", "frame", id, ..] => frame_id = Some(id.to_string()),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| err(format!("bad element count `{count}`")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, name] => {
                let element = elements.last_mut().ok_or_else(|| err("property before element"))?;
                let count = ScalarType::parse(count).ok_or_else(|| err(format!("unknown type `{count}`")))?;
                let item = ScalarType::parse(item).ok_or_else(|| err(format!("unknown type `{item}`")))?;
                if !count.is_integer() {
                    return Err(err("list count must be an integer type"));
                }
                element.properties.push(PlyProperty::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let element = elements.last_mut().ok_or_else(|| err("property before element"))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| err(format!("unknown type `{ty}`")))?;
                element.properties.push(PlyProperty::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => return Err(err(format!("unrecognised header line `{line}`"))),
        }
    }
    let format = format.ok_or_else(|| err("missing format line"))?;
    let header = PlyHeader {
        format,
        elements,
        frame_id,
        body_offset: pos,
    };
    VertexLayout::from_header(&header)?;
    Ok(header)
}

/// Where the fields we care about sit inside a vertex record.
struct VertexLayout {
    element: usize,
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

impl VertexLayout {
    fn from_header(header: &PlyHeader) -> Result<Self> {
        let element = header
            .elements
            .iter()
            .position(|e| e.name == "vertex")
            .ok_or_else(|| err("missing vertex element"))?;
        let props = &header.elements[element].properties;
        let find = |name: &str| -> Option<(usize, &PlyProperty)> {
            props.iter().enumerate().find(|(_, p)| p.name() == name)
        };
        let mut xyz = [0; 3];
        for (slot, name) in xyz.iter_mut().zip(["x", "y", "z"]) {
            match find(name) {
                Some((i, PlyProperty::Scalar { ty: ScalarType::F32 | ScalarType::F64, .. })) => *slot = i,
                Some(_) => return Err(err(format!("property `{name}` must be float or double"))),
                None => return Err(err(format!("vertex element lacks `{name}`"))),
            }
        }
        let channels: Vec<_> = ["red", "green", "blue"].iter().map(|n| find(n)).collect();
        let rgb = if channels.iter().all(Option::is_some) {
            let mut idx = [0; 3];
            for (slot, (c, name)) in idx.iter_mut().zip(channels.iter().zip(["red", "green", "blue"])) {
                match c {
                    Some((i, PlyProperty::Scalar { ty: ScalarType::U8, .. })) => *slot = *i,
                    _ => return Err(err(format!("property `{name}` must be uchar"))),
                }
            }
            Some(idx)
        } else {
            None
        };
        Ok(VertexLayout { element, xyz, rgb })
    }
}

/// Parses an ASCII or little-endian binary PLY into a point cloud. The
/// frame comes from a `comment frame` header line, or is empty.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_ply_header(bytes)?;
    let layout = VertexLayout::from_header(&header)?;
    let body = &bytes[header.body_offset..];
    let mut source: Box<dyn ValueSource + '_> = match header.format {
        PlyFormat::Ascii => Box::new(AsciiSource::new(body)?),
        PlyFormat::BinaryLittleEndian => Box::new(BinarySource { bytes: body, pos: 0 }),
    };

    let mut points = Vec::new();
    let mut colors = layout.rgb.map(|_| Vec::new());
    for (ei, element) in header.elements.iter().enumerate() {
        if ei == layout.element {
            // Cap the reservation by what the payload could possibly hold.
            let reserve = element.count.min(body.len() / 3 + 1);
            points.reserve(reserve);
            if let Some(c) = colors.as_mut() {
                c.reserve(reserve);
            }
            let mut values = vec![0.0f64; element.properties.len()];
            for v in 0..element.count {
                for (slot, prop) in values.iter_mut().zip(&element.properties) {
                    *slot = match prop {
                        PlyProperty::Scalar { ty, .. } => source.scalar(*ty, v)?,
                        PlyProperty::List { count, item, .. } => {
                            source.skip_list(*count, *item, v)?;
                            0.0
                        }
                    };
                }
                let p = Vec3::new(values[layout.xyz[0]], values[layout.xyz[1]], values[layout.xyz[2]]);
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(err(format!("vertex {v} has non-finite coordinates")));
                }
                points.push(p);
                if let (Some(c), Some(idx)) = (colors.as_mut(), layout.rgb) {
                    c.push(idx.map(|i| values[i] as u8));
                }
            }
            break;
        }
        if element.properties.is_empty() {
            continue;
        }
        for v in 0..element.count {
            for prop in &element.properties {
                match prop {
                    PlyProperty::Scalar { ty, .. } => {
                        source.scalar(*ty, v)?;
                    }
                    PlyProperty::List { count, item, .. } => source.skip_list(*count, *item, v)?,
                }
            }
        }
    }
    PointCloud::new(points, colors, header.frame_id.unwrap_or_default())
}

trait ValueSource {
    /// Reads one scalar of type `ty`; `record` is only used for messages.
    fn scalar(&mut self, ty: ScalarType, record: usize) -> Result<f64>;

    fn skip_list(&mut self, count: ScalarType, item: ScalarType, record: usize) -> Result<()> {
        let n = self.scalar(count, record)?;
        if n < 0.0 {
            return Err(err(format!("record {record}: negative list length")));
        }
        for _ in 0..n as u64 {
            self.scalar(item, record)?;
        }
        Ok(())
    }
}

struct BinarySource<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ValueSource for BinarySource<'_> {
    fn scalar(&mut self, ty: ScalarType, record: usize) -> Result<f64> {
        let n = ty.size();
        let chunk = self
            .pos
            .checked_add(n)
            .and_then(|end| self.bytes.get(self.pos..end))
            .ok_or_else(|| err(format!("truncated payload at record {record}")))?;
        self.pos += n;
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(chunk);
        Ok(match ty {
            ScalarType::I8 => i8::from_le_bytes([buf[0]]) as f64,
            ScalarType::U8 => buf[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(buf),
        })
    }
}

struct AsciiSource<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> AsciiSource<'a> {
    fn new(body: &'a [u8]) -> Result<Self> {
        let text = std::str::from_utf8(body).map_err(|_| err("ASCII payload is not valid text"))?;
        Ok(AsciiSource {
            tokens: text.split_ascii_whitespace(),
        })
    }
}

impl ValueSource for AsciiSource<'_> {
    fn scalar(&mut self, ty: ScalarType, record: usize) -> Result<f64> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| err(format!("truncated payload at record {record}")))?;
        let bad = || err(format!("record {record}: bad value `{tok}`"));
        if ty.is_integer() {
            let v: i64 = tok.parse().map_err(|_| bad())?;
            let (lo, hi) = match ty {
                ScalarType::I8 => (i8::MIN as i64, i8::MAX as i64),
                ScalarType::U8 => (0, u8::MAX as i64),
                ScalarType::I16 => (i16::MIN as i64, i16::MAX as i64),
                ScalarType::U16 => (0, u16::MAX as i64),
                ScalarType::I32 => (i32::MIN as i64, i32::MAX as i64),
                _ => (0, u32::MAX as i64),
            };
            if !(lo..=hi).contains(&v) {
                return Err(bad());
            }
            Ok(v as f64)
        } else {
            let v: f64 = tok.parse().map_err(|_| bad())?;
            Ok(if ty == ScalarType::F32 { v as f32 as f64 } else { v })
        }
    }
}

/// Serialises a cloud. Coordinates are written as `double`.
pub fn write_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    if !cloud.frame_id().is_empty() && !cloud.frame_id().contains(char::is_whitespace) {
        header.push_str(&format!("comment frame {}\n", cloud.frame_id()));
    }
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    let colors: Option<&[Rgb]> = cloud.colors();
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    match format {
        PlyFormat::Ascii => {
            for (i, p) in cloud.points().iter().enumerate() {
                let mut line = format!("{} {} {}", p.x, p.y, p.z);
                if let Some(c) = colors {
                    line.push_str(&format!(" {} {} {}", c[i][0], c[i][1], c[i][2]));
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride = 24 + if colors.is_some() { 3 } else { 0 };
            out.reserve(stride * cloud.len());
            for (i, p) in cloud.points().iter().enumerate() {
                for c in p.iter() {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(c) = colors {
                    out.extend_from_slice(&c[i]);
                }
            }
        }
    }
    out
}
