//! Reading and writing point clouds in the Polygon File Format.
//!
//! Only the `vertex` element's `x`, `y`, `z` properties are kept. Other vertex
//! properties (normals, colors) and other elements (faces) are read past and
//! discarded. Header comments are returned in a side list so callers can
//! carry metadata inside an otherwise ordinary PLY file.
//!
//! Supported bodies are `ascii` and `binary_little_endian`; big-endian files
//! are rejected with [`PlyError::UnsupportedEncoding`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::cloud::{CloudError, Point3, PointCloud};

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("truncated PLY body: header declares {declared} vertices, found {found}")]
    TruncatedBody { declared: usize, found: usize },
    #[error("unsupported PLY encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("invalid value in PLY body: {0}")]
    InvalidValue(String),
    #[error("non-finite coordinate at vertex {index}")]
    NonFiniteCoordinate { index: usize },
    #[error("cannot write an empty point cloud")]
    EmptyCloud,
    #[error("comment contains a line break")]
    InvalidComment,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordWidth {
    F32,
    F64,
}

/// Body layout and coordinate width, fixed per file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlyEncoding {
    pub format: PlyFormat,
    pub width: CoordWidth,
}

impl PlyEncoding {
    pub const ASCII_F64: Self = Self {
        format: PlyFormat::Ascii,
        width: CoordWidth::F64,
    };
    pub const BINARY_F32: Self = Self {
        format: PlyFormat::BinaryLittleEndian,
        width: CoordWidth::F32,
    };
    pub const BINARY_F64: Self = Self {
        format: PlyFormat::BinaryLittleEndian,
        width: CoordWidth::F64,
    };
}

impl Default for PlyEncoding {
    fn default() -> Self {
        Self::BINARY_F64
    }
}

/// A parsed file: the cloud plus the header comments in file order.
#[derive(Debug, Clone)]
pub struct PlyDocument {
    pub cloud: PointCloud,
    pub comments: Vec<String>,
    pub encoding: PlyEncoding,
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn read_le(self, b: &[u8]) -> f64 {
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

    fn parse_token(self, tok: &str) -> Option<f64> {
        match self {
            Self::F32 => tok.parse::<f32>().ok().map(f64::from),
            Self::F64 => tok.parse::<f64>().ok(),
            Self::I8 | Self::I16 | Self::I32 => tok.parse::<i64>().ok().map(|v| v as f64),
            Self::U8 | Self::U16 | Self::U32 => tok.parse::<u64>().ok().map(|v| v as f64),
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
    props: Vec<Property>,
}

impl Element {
    fn fixed_record_size(&self) -> Option<usize> {
        self.props.iter().try_fold(0usize, |acc, p| match p {
            Property::Scalar { ty, .. } => Some(acc + ty.size()),
            Property::List { .. } => None,
        })
    }

    fn coord_slots(&self) -> Option<([usize; 3], Scalar)> {
        let find = |axis: &str| {
            self.props
                .iter()
                .position(|p| matches!(p, Property::Scalar { name, .. } if name == axis))
        };
        let slots = [find("x")?, find("y")?, find("z")?];
        let ty = match &self.props[slots[0]] {
            Property::Scalar { ty, .. } => *ty,
            Property::List { .. } => unreachable!(),
        };
        Some((slots, ty))
    }
}

struct Header {
    format: PlyFormat,
    comments: Vec<String>,
    elements: Vec<Element>,
    body_offset: usize,
}

fn header_end(bytes: &[u8]) -> Option<usize> {
    const TAG: &[u8] = b"end_header";
    let mut from = 0;
    while let Some(pos) = bytes[from..].windows(TAG.len()).position(|w| w == TAG) {
        let at = from + pos;
        let line_start = at == 0 || bytes[at - 1] == b'\n';
        let mut end = at + TAG.len();
        while end < bytes.len() && (bytes[end] == b' ' || bytes[end] == b'\t') {
            end += 1;
        }
        if line_start {
            if bytes.get(end) == Some(&b'\n') {
                return Some(end + 1);
            }
            if bytes.get(end) == Some(&b'\r') && bytes.get(end + 1) == Some(&b'\n') {
                return Some(end + 2);
            }
            if end == bytes.len() {
                return Some(end);
            }
        }
        from = at + TAG.len();
    }
    None
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let malformed = |m: &str| PlyError::MalformedHeader(m.to_string());
    if !bytes.starts_with(b"ply") {
        return Err(malformed("missing `ply` magic"));
    }
    let body_offset = header_end(bytes).ok_or_else(|| malformed("missing `end_header`"))?;
    let text = std::str::from_utf8(&bytes[..body_offset]).map_err(|_| malformed("header is not valid UTF-8"))?;

    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some("ply") {
        return Err(malformed("first line must be `ply`"));
    }

    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    for raw in lines {
        let line = raw.trim_end_matches('\r');
        let mut words = line.split_whitespace();
        match words.next() {
            None => continue,
            Some("comment") => {
                let rest = line.trim_start().strip_prefix("comment").unwrap_or("");
                comments.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
            }
            Some("obj_info") => {}
            Some("format") => {
                let variant = words.next().ok_or_else(|| malformed("format line without variant"))?;
                format = Some(match variant {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => return Err(PlyError::UnsupportedEncoding(variant.to_string())),
                    other => return Err(malformed(&format!("unknown format `{other}`"))),
                });
            }
            Some("element") => {
                let name = words.next().ok_or_else(|| malformed("element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| malformed("element without valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?;
                let first = words.next().ok_or_else(|| malformed("empty property line"))?;
                let prop = if first == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item, words.next()) {
                        (Some(count), Some(item), Some(_)) => Property::List { count, item },
                        _ => return Err(malformed("invalid list property")),
                    }
                } else {
                    let ty =
                        Scalar::parse(first).ok_or_else(|| malformed(&format!("unknown property type `{first}`")))?;
                    let name = words.next().ok_or_else(|| malformed("property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                element.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(malformed(&format!("unexpected header keyword `{other}`"))),
        }
    }

    let format = format.ok_or_else(|| malformed("missing format line"))?;
    Ok(Header {
        format,
        comments,
        elements,
        body_offset,
    })
}

/// Parses a PLY byte buffer into a point cloud.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, PlyError> {
    parse_ply_document(bytes).map(|doc| doc.cloud)
}

/// Parses a PLY byte buffer, keeping header comments alongside the cloud.
pub fn parse_ply_document(bytes: &[u8]) -> Result<PlyDocument, PlyError> {
    let header = parse_header(bytes)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::MalformedHeader("no `vertex` element".into()))?;
    let vertex = &header.elements[vertex_pos];
    let (slots, coord_ty) = vertex
        .coord_slots()
        .ok_or_else(|| PlyError::MalformedHeader("vertex element lacks x, y, z properties".into()))?;
    let width = if coord_ty == Scalar::F32 {
        CoordWidth::F32
    } else {
        CoordWidth::F64
    };

    let body = &bytes[header.body_offset..];
    let points = match header.format {
        PlyFormat::Ascii => read_ascii(body, &header.elements[..vertex_pos], vertex, slots)?,
        PlyFormat::BinaryLittleEndian => read_binary(body, &header.elements[..vertex_pos], vertex, slots)?,
    };

    let cloud = PointCloud::new(points).map_err(|e| match e {
        CloudError::NonFinite { index } => PlyError::NonFiniteCoordinate { index },
        CloudError::Empty => PlyError::EmptyCloud,
    })?;
    Ok(PlyDocument {
        cloud,
        comments: header.comments,
        encoding: PlyEncoding {
            format: header.format,
            width,
        },
    })
}

fn read_ascii(body: &[u8], before: &[Element], vertex: &Element, slots: [usize; 3]) -> Result<Vec<Point3>, PlyError> {
    let text = std::str::from_utf8(body).map_err(|_| PlyError::InvalidValue("ascii body is not valid UTF-8".into()))?;
    let mut tokens = text.split_ascii_whitespace();

    for element in before {
        for _ in 0..element.count {
            for prop in &element.props {
                match prop {
                    Property::Scalar { .. } => {
                        if tokens.next().is_none() {
                            return Err(PlyError::TruncatedBody {
                                declared: vertex.count,
                                found: 0,
                            });
                        }
                    }
                    Property::List { count, .. } => {
                        let n = next_list_len(&mut tokens, *count, vertex.count, 0)?;
                        for _ in 0..n {
                            if tokens.next().is_none() {
                                return Err(PlyError::TruncatedBody {
                                    declared: vertex.count,
                                    found: 0,
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    let mut points = Vec::with_capacity(vertex.count.min(body.len() / 6 + 1));
    for found in 0..vertex.count {
        let mut p = [0.0; 3];
        for (slot, prop) in vertex.props.iter().enumerate() {
            match prop {
                Property::Scalar { ty, .. } => {
                    let tok = tokens.next().ok_or(PlyError::TruncatedBody {
                        declared: vertex.count,
                        found,
                    })?;
                    if let Some(axis) = slots.iter().position(|&s| s == slot) {
                        p[axis] = ty
                            .parse_token(tok)
                            .ok_or_else(|| PlyError::InvalidValue(format!("vertex {found}: `{tok}`")))?;
                    }
                }
                Property::List { count, .. } => {
                    let n = next_list_len(&mut tokens, *count, vertex.count, found)?;
                    for _ in 0..n {
                        tokens.next().ok_or(PlyError::TruncatedBody {
                            declared: vertex.count,
                            found,
                        })?;
                    }
                }
            }
        }
        points.push(p);
    }
    Ok(points)
}

fn next_list_len<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    ty: Scalar,
    declared: usize,
    found: usize,
) -> Result<usize, PlyError> {
    let tok = tokens.next().ok_or(PlyError::TruncatedBody { declared, found })?;
    ty.parse_token(tok)
        .filter(|v| *v >= 0.0 && v.fract() == 0.0)
        .map(|v| v as usize)
        .ok_or_else(|| PlyError::InvalidValue(format!("bad list length `{tok}`")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
}

fn read_binary(body: &[u8], before: &[Element], vertex: &Element, slots: [usize; 3]) -> Result<Vec<Point3>, PlyError> {
    let mut cur = Cursor { buf: body, pos: 0 };
    let truncated = |found| PlyError::TruncatedBody {
        declared: vertex.count,
        found,
    };

    for element in before {
        if let Some(size) = element.fixed_record_size() {
            let total = size.checked_mul(element.count).ok_or(truncated(0))?;
            cur.take(total).ok_or(truncated(0))?;
        } else {
            for _ in 0..element.count {
                skip_record(&mut cur, element).ok_or(truncated(0))?;
            }
        }
    }

    if let Some(size) = vertex.fixed_record_size() {
        let offsets: Vec<usize> = vertex
            .props
            .iter()
            .scan(0usize, |off, p| {
                let here = *off;
                if let Property::Scalar { ty, .. } = p {
                    *off += ty.size();
                }
                Some(here)
            })
            .collect();
        let types: Vec<Scalar> = slots
            .iter()
            .map(|&s| match vertex.props[s] {
                Property::Scalar { ty, .. } => ty,
                Property::List { .. } => unreachable!(),
            })
            .collect();
        let available = (body.len() - cur.pos) / size.max(1);
        if size == 0 || available < vertex.count {
            return Err(truncated(if size == 0 { 0 } else { available.min(vertex.count) }));
        }
        let mut points = Vec::with_capacity(vertex.count);
        let records = &body[cur.pos..cur.pos + size * vertex.count];
        for rec in records.chunks_exact(size) {
            let mut p = [0.0; 3];
            for axis in 0..3 {
                let off = offsets[slots[axis]];
                p[axis] = types[axis].read_le(&rec[off..]);
            }
            points.push(p);
        }
        return Ok(points);
    }

    let mut points = Vec::with_capacity(vertex.count.min(body.len() / 12 + 1));
    for found in 0..vertex.count {
        let mut p = [0.0; 3];
        for (slot, prop) in vertex.props.iter().enumerate() {
            match prop {
                Property::Scalar { ty, .. } => {
                    let b = cur.take(ty.size()).ok_or(truncated(found))?;
                    if let Some(axis) = slots.iter().position(|&s| s == slot) {
                        p[axis] = ty.read_le(b);
                    }
                }
                Property::List { count, item } => {
                    let b = cur.take(count.size()).ok_or(truncated(found))?;
                    let n = list_len(*count, b).ok_or(truncated(found))?;
                    let bytes = n.checked_mul(item.size()).ok_or(truncated(found))?;
                    cur.take(bytes).ok_or(truncated(found))?;
                }
            }
        }
        points.push(p);
    }
    Ok(points)
}

fn list_len(ty: Scalar, b: &[u8]) -> Option<usize> {
    let v = ty.read_le(b);
    (v >= 0.0 && v.fract() == 0.0).then_some(v as usize)
}

fn skip_record(cur: &mut Cursor<'_>, element: &Element) -> Option<()> {
    for prop in &element.props {
        match prop {
            Property::Scalar { ty, .. } => {
                cur.take(ty.size())?;
            }
            Property::List { count, item } => {
                let n = list_len(*count, cur.take(count.size())?)?;
                cur.take(n.checked_mul(item.size())?)?;
            }
        }
    }
    Some(())
}

/// Serializes a cloud with no header comments.
pub fn write_ply(cloud: &PointCloud, enc: PlyEncoding) -> Result<Vec<u8>, PlyError> {
    write_ply_with_comments(cloud, enc, &[])
}

/// Serializes a cloud, emitting each entry of `comments` as a `comment` line.
pub fn write_ply_with_comments(cloud: &PointCloud, enc: PlyEncoding, comments: &[String]) -> Result<Vec<u8>, PlyError> {
    if cloud.is_empty() {
        return Err(PlyError::EmptyCloud);
    }
    if comments.iter().any(|c| c.contains('\n') || c.contains('\r')) {
        return Err(PlyError::InvalidComment);
    }
    let format = match enc.format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let ty = match enc.width {
        CoordWidth::F32 => "float",
        CoordWidth::F64 => "double",
    };
    let comment_bytes: usize = comments.iter().map(|c| c.len() + 9).sum();
    let body_estimate = match (enc.format, enc.width) {
        (PlyFormat::Ascii, _) => cloud.len() * 40,
        (_, CoordWidth::F32) => cloud.len() * 12,
        (_, CoordWidth::F64) => cloud.len() * 24,
    };
    let mut header = String::with_capacity(128 + comment_bytes);
    header.push_str("ply\n");
    let _ = writeln!(header, "format {format} 1.0");
    for c in comments {
        let _ = writeln!(header, "comment {c}");
    }
    let _ = writeln!(header, "element vertex {}", cloud.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(header, "property {ty} {axis}");
    }
    header.push_str("end_header\n");

    let mut out = Vec::with_capacity(header.len() + body_estimate);
    out.extend_from_slice(header.as_bytes());
    match enc.format {
        PlyFormat::Ascii => {
            let mut line = String::with_capacity(80);
            for p in cloud.points() {
                line.clear();
                match enc.width {
                    CoordWidth::F32 => {
                        let _ = writeln!(line, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32);
                    }
                    CoordWidth::F64 => {
                        let _ = writeln!(line, "{} {} {}", p[0], p[1], p[2]);
                    }
                }
                out.extend_from_slice(line.as_bytes());
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for p in cloud.points() {
                for v in p {
                    match enc.width {
                        CoordWidth::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                        CoordWidth::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn read_ply_file(path: impl AsRef<Path>) -> Result<PointCloud, PlyError> {
    let path = path.as_ref();
    let cloud = parse_ply(&fs::read(path)?)?;
    Ok(match path.file_stem().and_then(|s| s.to_str()) {
        Some(stem) => cloud.with_source_id(stem),
        None => cloud,
    })
}

pub fn write_ply_file(path: impl AsRef<Path>, cloud: &PointCloud, enc: PlyEncoding) -> Result<(), PlyError> {
    fs::write(path, write_ply(cloud, enc)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    #[test]
    fn parses_two_vertex_ascii() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.points(), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn declared_count_mismatch_is_truncation() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n";
        match parse_ply(text) {
            Err(PlyError::TruncatedBody { declared: 3, found: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let c = cloud(vec![[1.0, 2.0, 3.0]; 3]);
        let bytes = write_ply(&c, PlyEncoding::BINARY_F64).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            parse_ply(cut),
            Err(PlyError::TruncatedBody { declared: 3, found: 2 })
        ));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_ply(b"plx\n"), Err(PlyError::MalformedHeader(_))));
        assert!(matches!(
            parse_ply(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"),
            Err(PlyError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_ply(b"ply\nformat ascii 1.0\nelement face 0\nend_header\n"),
            Err(PlyError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_ply(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n"),
            Err(PlyError::UnsupportedEncoding(_))
        ));
    }

    #[test]
    fn skips_normals_colors_and_faces() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nproperty float nx\nproperty float ny\nproperty float nz\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0.5 1 2 0 0 1 255 0 0\n3 4 5 0 1 0 0 255 0\n3 0 1 1\n";
        let doc = parse_ply_document(text.as_bytes()).unwrap();
        assert_eq!(doc.cloud.points(), &[[0.5, 1.0, 2.0], [3.0, 4.0, 5.0]]);
        assert_eq!(doc.comments, vec!["made by hand".to_string()]);
        assert_eq!(doc.encoding, PlyEncoding::ASCII_F64);
    }

    #[test]
    fn binary_with_leading_list_element_and_mixed_properties() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty list uchar float params\nelement vertex 2\nproperty uchar flag\nproperty float x\nproperty float y\nproperty float z\nproperty list uchar int idx\nend_header\n".to_vec();
        bytes.push(2);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        for (i, p) in [[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]].iter().enumerate() {
            bytes.push(7);
            for v in p {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.push(i as u8);
            for _ in 0..i {
                bytes.extend_from_slice(&9i32.to_le_bytes());
            }
        }
        let c = parse_ply(&bytes).unwrap();
        assert_eq!(c.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn writer_header_and_empty() {
        let c = cloud(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let text = String::from_utf8(write_ply(&c, PlyEncoding::ASCII_F64).unwrap()).unwrap();
        assert!(text.contains("element vertex 2\n"));
        assert!(matches!(
            write_ply(&PointCloud::default(), PlyEncoding::ASCII_F64),
            Err(PlyError::EmptyCloud)
        ));
    }

    #[test]
    fn f32_roundtrip_hits_nearest_single() {
        // 0.1 in binary32 is 13421773 * 2^-27.
        let nearest = 13_421_773.0f64 / 134_217_728.0;
        let c = cloud(vec![[0.1, -0.1, 0.1]]);
        for enc in [
            PlyEncoding::BINARY_F32,
            PlyEncoding {
                format: PlyFormat::Ascii,
                width: CoordWidth::F32,
            },
        ] {
            let back = parse_ply(&write_ply(&c, enc).unwrap()).unwrap();
            assert_eq!(back.points()[0], [nearest, -nearest, nearest]);
        }
    }

    #[test]
    fn comments_roundtrip() {
        let c = cloud(vec![[1.0, 2.0, 3.0]]);
        let comments = vec!["pcsr-frame: v1".to_string(), "  spaced".to_string()];
        let bytes = write_ply_with_comments(&c, PlyEncoding::BINARY_F64, &comments).unwrap();
        let doc = parse_ply_document(&bytes).unwrap();
        assert_eq!(doc.comments, comments);
        assert!(write_ply_with_comments(&c, PlyEncoding::BINARY_F64, &["a\nb".into()]).is_err());
    }

    #[test]
    fn large_declared_count_does_not_allocate() {
        let text = b"ply\nformat binary_little_endian 1.0\nelement vertex 18446744073709551615\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
        assert!(matches!(parse_ply(text), Err(PlyError::TruncatedBody { .. })));
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
    }

    proptest! {
        #[test]
        fn f64_roundtrip_is_bit_exact(
            pts in prop::collection::vec([finite(), finite(), finite()], 1..200),
            ascii in any::<bool>(),
        ) {
            let c = cloud(pts);
            let enc = if ascii { PlyEncoding::ASCII_F64 } else { PlyEncoding::BINARY_F64 };
            let back = parse_ply(&write_ply(&c, enc).unwrap()).unwrap();
            prop_assert!(back.bit_eq(&c));
        }

        #[test]
        fn parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
            let _ = parse_ply(&bytes);
        }

        #[test]
        fn parser_is_total_after_valid_header(tail in prop::collection::vec(any::<u8>(), 0..256), ascii in any::<bool>()) {
            let fmt = if ascii { "ascii" } else { "binary_little_endian" };
            let mut bytes = format!("ply\nformat {fmt} 1.0\nelement vertex 4\nproperty float x\nproperty list uchar int l\nproperty double y\nproperty double z\nend_header\n").into_bytes();
            bytes.extend(tail);
            let _ = parse_ply(&bytes);
        }
    }
}
