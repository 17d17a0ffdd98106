//! Minimal PLY reader covering ASCII and binary little-endian files with
//! scalar and list properties. Everything is decoded into `f64` columns.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
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
}

#[derive(Clone, Debug, PartialEq)]
pub enum Property {
    Scalar { name: String, ty: ScalarType },
    List { name: String, count: ScalarType, item: ScalarType },
}

impl Property {
    pub fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
    /// One column per scalar property, in declaration order.
    pub scalars: Vec<Vec<f64>>,
    /// One column per list property, in declaration order.
    pub lists: Vec<Vec<Vec<f64>>>,
}

impl Element {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        self.properties
            .iter()
            .filter(|p| matches!(p, Property::Scalar { .. }))
            .position(|p| p.name() == name)
            .map(|i| self.scalars[i].as_slice())
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.properties
            .iter()
            .filter(|p| matches!(p, Property::List { .. }))
            .position(|p| p.name() == name)
            .map(|i| self.lists[i].as_slice())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Debug)]
pub struct PlyFile {
    pub elements: Vec<Element>,
}

impl PlyFile {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::format("PLY", msg)
}

pub fn read_ply(path: &Path) -> Result<PlyFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyFile> {
    let marker = b"end_header";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| bad("missing end_header"))?;
    let mut body_start = end + marker.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(bad("missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLittleEndian,
                    other => return Err(bad(format!("unsupported format {other}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count {count}")))?,
                properties: Vec::new(),
                scalars: Vec::new(),
                lists: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let count = ScalarType::parse(count).ok_or_else(|| bad(format!("bad type {count}")))?;
                let item = ScalarType::parse(item).ok_or_else(|| bad(format!("bad type {item}")))?;
                el.properties.push(Property::List { name: name.to_string(), count, item });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ty = ScalarType::parse(ty).ok_or_else(|| bad(format!("bad type {ty}")))?;
                el.properties.push(Property::Scalar { name: name.to_string(), ty });
            }
            _ => return Err(bad(format!("unrecognized header line {line:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| bad("missing format line"))?;
    for el in &mut elements {
        let n_scalar = el.properties.iter().filter(|p| matches!(p, Property::Scalar { .. })).count();
        el.scalars = vec![Vec::with_capacity(el.count); n_scalar];
        el.lists = vec![Vec::with_capacity(el.count); el.properties.len() - n_scalar];
    }
    let body = &bytes[body_start..];
    match encoding {
        Encoding::BinaryLittleEndian => decode_binary(body, &mut elements)?,
        Encoding::Ascii => decode_ascii(body, &mut elements)?,
    }
    Ok(PlyFile { elements })
}

fn decode_binary(body: &[u8], elements: &mut [Element]) -> Result<()> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = body.get(pos..pos + n).ok_or_else(|| bad("truncated binary body"))?;
        pos += n;
        Ok(s)
    };
    for el in elements.iter_mut() {
        for _ in 0..el.count {
            let (mut si, mut li) = (0, 0);
            for prop in &el.properties {
                match prop {
                    Property::Scalar { ty, .. } => {
                        el.scalars[si].push(ty.read_le(take(ty.size())?));
                        si += 1;
                    }
                    Property::List { count, item, .. } => {
                        let n = count.read_le(take(count.size())?);
                        if !(n >= 0.0) {
                            return Err(bad("negative list length"));
                        }
                        let raw = take(n as usize * item.size())?;
                        let vals = raw.chunks_exact(item.size()).map(|c| item.read_le(c)).collect();
                        el.lists[li].push(vals);
                        li += 1;
                    }
                }
            }
        }
    }
    Ok(())
}

fn decode_ascii(body: &[u8], elements: &mut [Element]) -> Result<()> {
    let text = std::str::from_utf8(body).map_err(|_| bad("ASCII body is not UTF-8"))?;
    let mut tokens = text.split_whitespace();
    let mut next = || -> Result<f64> {
        let t = tokens.next().ok_or_else(|| bad("truncated ASCII body"))?;
        t.parse::<f64>().map_err(|_| bad(format!("bad number {t:?}")))
    };
    for el in elements.iter_mut() {
        for _ in 0..el.count {
            let (mut si, mut li) = (0, 0);
            for prop in &el.properties {
                match prop {
                    Property::Scalar { .. } => {
                        el.scalars[si].push(next()?);
                        si += 1;
                    }
                    Property::List { .. } => {
                        let n = next()?;
                        if !(n >= 0.0) {
                            return Err(bad("negative list length"));
                        }
                        let vals = (0..n as usize).map(|_| next()).collect::<Result<Vec<_>>>()?;
                        el.lists[li].push(vals);
                        li += 1;
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_with_faces() {
        let src = b"ply\nformat ascii 1.0\ncomment hi\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let ply = parse_ply(src).unwrap();
        let v = ply.element("vertex").unwrap();
        assert_eq!(v.scalar("x").unwrap(), &[0.0, 1.0, 0.0]);
        let f = ply.element("face").unwrap();
        assert_eq!(f.list("vertex_indices").unwrap()[0], vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn binary_mixed_types() {
        let mut src = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty uchar red\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n".to_vec();
        src.extend_from_slice(&1.5f64.to_le_bytes());
        src.push(200);
        src.extend_from_slice(&(-2.0f64).to_le_bytes());
        src.push(7);
        src.push(3);
        for i in [4u32, 5, 6] {
            src.extend_from_slice(&i.to_le_bytes());
        }
        let ply = parse_ply(&src).unwrap();
        let v = ply.element("vertex").unwrap();
        assert_eq!(v.scalar("x").unwrap(), &[1.5, -2.0]);
        assert_eq!(v.scalar("red").unwrap(), &[200.0, 7.0]);
        assert_eq!(ply.element("face").unwrap().list("vertex_indices").unwrap()[0], vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let src = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nend_header\n\0\0\0\0";
        assert!(parse_ply(src).is_err());
    }
}
