//! Minimal binary little-endian PLY support for vertex-only point data.

use std::collections::HashMap;
use std::io::Write;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarKind::I8,
            "uchar" | "uint8" => ScalarKind::U8,
            "short" | "int16" => ScalarKind::I16,
            "ushort" | "uint16" => ScalarKind::U16,
            "int" | "int32" => ScalarKind::I32,
            "uint" | "uint32" => ScalarKind::U32,
            "float" | "float32" => ScalarKind::F32,
            "double" | "float64" => ScalarKind::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            ScalarKind::I8 | ScalarKind::U8 => 1,
            ScalarKind::I16 | ScalarKind::U16 => 2,
            ScalarKind::I32 | ScalarKind::U32 | ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarKind::I8 => "char",
            ScalarKind::U8 => "uchar",
            ScalarKind::I16 => "short",
            ScalarKind::U16 => "ushort",
            ScalarKind::I32 => "int",
            ScalarKind::U32 => "uint",
            ScalarKind::F32 => "float",
            ScalarKind::F64 => "double",
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            ScalarKind::I8 => b[0] as i8 as f64,
            ScalarKind::U8 => b[0] as f64,
            ScalarKind::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarKind::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarKind::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarKind::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarKind::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Property {
    pub name: String,
    pub kind: ScalarKind,
}

impl Property {
    pub fn new(name: impl Into<String>, kind: ScalarKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

impl Element {
    pub fn stride(&self) -> usize {
        self.properties.iter().map(|p| p.kind.size()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub elements: Vec<Element>,
    pub comments: Vec<String>,
    /// Byte length of the header including the `end_header` line.
    pub len: usize,
}

pub fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::PlyHeader("no end_header line".into()))?;
    let mut len = end + END.len();
    match bytes.get(len) {
        Some(b'\n') => len += 1,
        Some(b'\r') if bytes.get(len + 1) == Some(&b'\n') => len += 2,
        _ => return Err(Error::PlyHeader("end_header must end its line".into())),
    }
    let text = std::str::from_utf8(&bytes[..len]).map_err(|_| Error::PlyHeader("header is not valid UTF-8".into()))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::PlyHeader("missing `ply` magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    let mut format_seen = false;
    for line in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("format") => {
                let fmt = parts.next().unwrap_or("");
                if fmt != "binary_little_endian" {
                    return Err(Error::PlyHeader(format!("unsupported format `{fmt}`")));
                }
                format_seen = true;
            }
            Some("comment") | Some("obj_info") => {
                comments.push(line.split_once(' ').map(|x| x.1).unwrap_or("").to_string())
            }
            Some("element") => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::PlyHeader("element without name".into()))?;
                let count = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::PlyHeader(format!("bad count for element `{name}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::PlyHeader("property before any element".into()))?;
                let ty = parts.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::PlyHeader(format!(
                        "list properties are not supported (element `{}`)",
                        el.name
                    )));
                }
                let kind =
                    ScalarKind::parse(ty).ok_or_else(|| Error::PlyHeader(format!("unknown property type `{ty}`")))?;
                let name = parts
                    .next()
                    .ok_or_else(|| Error::PlyHeader("property without name".into()))?;
                el.properties.push(Property::new(name, kind));
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::PlyHeader(format!("unexpected header line `{other}`"))),
            None => {}
        }
    }
    if !format_seen {
        return Err(Error::PlyHeader("missing format line".into()));
    }
    Ok(Header {
        elements,
        comments,
        len,
    })
}

/// Read-only view of the vertex element of a PLY file.
#[derive(Debug)]
pub struct VertexTable<'a> {
    pub header: Header,
    offsets: HashMap<String, (usize, ScalarKind)>,
    stride: usize,
    count: usize,
    data: &'a [u8],
}

impl<'a> VertexTable<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        let mut start = header.len;
        let mut vertex = None;
        for el in &header.elements {
            if el.name == "vertex" {
                vertex = Some(el.clone());
                break;
            }
            start += el.count * el.stride();
        }
        let vertex = vertex.ok_or_else(|| Error::PlyHeader("no vertex element".into()))?;
        let stride = vertex.stride();
        let expected = vertex.count * stride;
        let actual = bytes.len().saturating_sub(start);
        if actual < expected {
            return Err(Error::PlyTruncated { expected, actual });
        }
        let mut offsets = HashMap::new();
        let mut off = 0;
        for p in &vertex.properties {
            offsets.insert(p.name.clone(), (off, p.kind));
            off += p.kind.size();
        }
        Ok(Self {
            offsets,
            stride,
            count: vertex.count,
            data: &bytes[start..start + expected],
            header,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn has(&self, name: &str) -> bool {
        self.offsets.contains_key(name)
    }

    /// Column accessor; errors when the property is absent.
    pub fn column(&self, name: &str) -> Result<Column<'_>> {
        let &(offset, kind) = self
            .offsets
            .get(name)
            .ok_or_else(|| Error::PlyMissingProperty(name.to_string()))?;
        Ok(Column {
            table: self,
            offset,
            kind,
        })
    }

    pub fn kind(&self, name: &str) -> Option<ScalarKind> {
        self.offsets.get(name).map(|x| x.1)
    }

    /// Raw bytes of one property value.
    pub fn raw(&self, row: usize, name: &str) -> Option<&[u8]> {
        let &(offset, kind) = self.offsets.get(name)?;
        let start = row * self.stride + offset;
        Some(&self.data[start..start + kind.size()])
    }
}

#[derive(Clone, Copy)]
pub struct Column<'t> {
    table: &'t VertexTable<'t>,
    offset: usize,
    kind: ScalarKind,
}

impl Column<'_> {
    pub fn get(&self, row: usize) -> f64 {
        let start = row * self.table.stride + self.offset;
        self.kind.read(&self.table.data[start..])
    }
}

/// Writes a header for a single vertex element.
pub fn write_vertex_header<W: Write>(
    out: &mut W,
    comments: &[String],
    count: usize,
    properties: &[Property],
) -> std::io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format binary_little_endian 1.0")?;
    for c in comments {
        writeln!(out, "comment {c}")?;
    }
    writeln!(out, "element vertex {count}")?;
    for p in properties {
        writeln!(out, "property {} {}", p.kind.name(), p.name)?;
    }
    writeln!(out, "end_header")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let mut out = Vec::new();
        write_vertex_header(
            &mut out,
            &["hello world".into()],
            2,
            &[
                Property::new("x", ScalarKind::F32),
                Property::new("c", ScalarKind::U8),
                Property::new("d", ScalarKind::F64),
            ],
        )
        .unwrap();
        for (x, c, d) in [(1.5f32, 7u8, -2.25f64), (3.0, 255, 1e-300)] {
            out.extend_from_slice(&x.to_le_bytes());
            out.push(c);
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    #[test]
    fn reads_back_columns() {
        let bytes = sample();
        let t = VertexTable::parse(&bytes).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.header.comments, vec!["hello world".to_string()]);
        assert_eq!(t.column("x").unwrap().get(1), 3.0);
        assert_eq!(t.column("c").unwrap().get(1), 255.0);
        assert_eq!(t.column("d").unwrap().get(0), -2.25);
        assert_eq!(t.column("d").unwrap().get(1), 1e-300);
        assert!(matches!(t.column("y"), Err(Error::PlyMissingProperty(_))));
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let mut bytes = sample();
        bytes.truncate(bytes.len() - 3);
        match VertexTable::parse(&bytes) {
            Err(Error::PlyTruncated { expected, actual }) => {
                assert_eq!(expected, 26);
                assert_eq!(actual, 23);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(matches!(parse_header(b"plx\nend_header\n"), Err(Error::PlyHeader(_))));
        assert!(matches!(
            parse_header(b"ply\nformat ascii 1.0\nend_header\n"),
            Err(Error::PlyHeader(_))
        ));
        assert!(matches!(
            parse_header(b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"),
            Err(Error::PlyHeader(_))
        ));
        assert!(matches!(
            parse_header(b"ply\nformat binary_little_endian 1.0\nelement vertex x\nend_header\n"),
            Err(Error::PlyHeader(_))
        ));
    }
}
