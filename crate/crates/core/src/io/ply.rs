//! PLY reader/writer (ascii and binary little-endian).
//!
//! The reader is generic over the declared elements and properties; list
//! properties are parsed and skipped. Every failure is reported with the byte
//! offset at which it happened.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

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

    pub fn name(self) -> &'static str {
        match self {
            ScalarType::I8 => "char",
            ScalarType::U8 => "uchar",
            ScalarType::I16 => "short",
            ScalarType::U16 => "ushort",
            ScalarType::I32 => "int",
            ScalarType::U32 => "uint",
            ScalarType::F32 => "float",
            ScalarType::F64 => "double",
        }
    }

    pub fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, ScalarType::F32 | ScalarType::F64)
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => f64::from(b[0] as i8),
            ScalarType::U8 => f64::from(b[0]),
            ScalarType::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            ScalarType::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            ScalarType::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            ScalarType::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            ScalarType::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }

    fn encode_le(self, v: f64, out: &mut Vec<u8>) {
        match self {
            ScalarType::I8 => out.push(v as i8 as u8),
            ScalarType::U8 => out.push(v as u8),
            ScalarType::I16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            ScalarType::U16 => out.extend_from_slice(&(v as u16).to_le_bytes()),
            ScalarType::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            ScalarType::U32 => out.extend_from_slice(&(v as u32).to_le_bytes()),
            ScalarType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            ScalarType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }

    fn format_ascii(self, v: f64) -> String {
        match self {
            ScalarType::F32 => format!("{}", v as f32),
            ScalarType::F64 => format!("{v}"),
            _ => format!("{}", v as i64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropertyInfo {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElementInfo {
    pub name: String,
    pub count: usize,
    pub properties: Vec<PropertyInfo>,
}

impl ElementInfo {
    /// Byte size of one record when all properties are scalars.
    pub fn record_size(&self) -> Option<usize> {
        self.properties
            .iter()
            .map(|p| match p.kind {
                PropertyKind::Scalar(t) => Some(t.size()),
                PropertyKind::List { .. } => None,
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlyHeaderInfo {
    pub format: PlyFormat,
    pub elements: Vec<ElementInfo>,
    pub comments: Vec<String>,
    /// Byte length of the header including the `end_header` line.
    pub header_len: usize,
}

impl PlyHeaderInfo {
    pub fn element(&self, name: &str) -> Option<&ElementInfo> {
        self.elements.iter().find(|e| e.name == name)
    }

    /// Value of a `comment <key> <value>` line.
    pub fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments.iter().find_map(|c| {
            let mut it = c.splitn(2, char::is_whitespace);
            (it.next() == Some(key)).then(|| it.next().unwrap_or("").trim())
        })
    }
}

/// Scalar columns of one element, keyed by property name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ElementData {
    pub count: usize,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl ElementData {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyData {
    pub header: PlyHeaderInfo,
    pub elements: BTreeMap<String, ElementData>,
}

pub fn parse_header(bytes: &[u8]) -> Result<PlyHeaderInfo> {
    let mut offset = 0usize;
    let next_line = |offset: &mut usize| -> Result<(usize, String)> {
        let start = *offset;
        let rest = &bytes[start..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(start, "unterminated header line"))?;
        *offset = start + end + 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::parse(start, "header is not valid utf-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (at, magic) = next_line(&mut offset)?;
    if magic.trim() != "ply" {
        return Err(Error::parse(at, "missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<ElementInfo> = Vec::new();
    let mut comments = Vec::new();
    loop {
        let (at, line) = next_line(&mut offset)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            None => continue,
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => return Err(Error::parse(at, format!("unsupported format `{other}`"))),
                    None => return Err(Error::parse(at, "format line without a format")),
                });
            }
            Some("comment") | Some("obj_info") => {
                let text = line.trim_start();
                let body = text.split_once(char::is_whitespace).map(|x| x.1).unwrap_or("");
                comments.push(body.trim().to_string());
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| Error::parse(at, "element without a name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::parse(at, "element count is not a non-negative integer"))?;
                elements.push(ElementInfo {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(at, "property before any element"))?;
                let ty = tok.next().ok_or_else(|| Error::parse(at, "property without a type"))?;
                let kind = if ty == "list" {
                    let count = tok.next().and_then(ScalarType::parse);
                    let item = tok.next().and_then(ScalarType::parse);
                    match (count, item) {
                        (Some(count), Some(item)) if !count.is_float() => PropertyKind::List { count, item },
                        _ => return Err(Error::parse(at, "malformed list property")),
                    }
                } else {
                    PropertyKind::Scalar(
                        ScalarType::parse(ty).ok_or_else(|| Error::parse(at, format!("unknown property type `{ty}`")))?,
                    )
                };
                let name = tok.next().ok_or_else(|| Error::parse(at, "property without a name"))?;
                element.properties.push(PropertyInfo {
                    name: name.to_string(),
                    kind,
                });
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::parse(at, format!("unexpected header keyword `{other}`"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(0, "header has no format line"))?;
    Ok(PlyHeaderInfo {
        format,
        elements,
        comments,
        header_len: offset,
    })
}

struct AsciiCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl AsciiCursor<'_> {
    fn token(&mut self) -> Result<(usize, &str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, "unexpected end of data"));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::parse(start, "invalid utf-8 in data"))?;
        Ok((start, s))
    }

    fn value(&mut self, ty: ScalarType) -> Result<f64> {
        let (at, tok) = self.token()?;
        if ty.is_float() {
            tok.parse::<f64>().map_err(|_| Error::parse(at, format!("`{tok}` is not a number")))
        } else {
            tok.parse::<i64>()
                .map(|v| v as f64)
                .map_err(|_| Error::parse(at, format!("`{tok}` is not an integer")))
        }
    }
}

struct BinaryCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl BinaryCursor<'_> {
    fn value(&mut self, ty: ScalarType) -> Result<f64> {
        let n = ty.size();
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.pos, "unexpected end of binary data"));
        }
        let v = ty.decode_le(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let header = parse_header(bytes)?;
    let mut elements = BTreeMap::new();
    let mut ascii = AsciiCursor {
        bytes,
        pos: header.header_len,
    };
    let mut binary = BinaryCursor {
        bytes,
        pos: header.header_len,
    };
    let remaining = bytes.len().saturating_sub(header.header_len);
    for el in &header.elements {
        if header.format == PlyFormat::BinaryLittleEndian {
            if let Some(rs) = el.record_size() {
                let need = rs.checked_mul(el.count);
                let avail = bytes.len() - binary.pos;
                if need.is_none_or(|n| n > avail) {
                    return Err(Error::parse(
                        binary.pos,
                        format!("element `{}` declares {} records but the file is too short", el.name, el.count),
                    ));
                }
            }
        }
        // Never trust the declared count for allocation.
        let cap = el.count.min(remaining);
        let mut columns: BTreeMap<String, Vec<f64>> = el
            .properties
            .iter()
            .filter(|p| matches!(p.kind, PropertyKind::Scalar(_)))
            .map(|p| (p.name.clone(), Vec::with_capacity(cap)))
            .collect();
        for _ in 0..el.count {
            for prop in &el.properties {
                let mut read = |ty: ScalarType| -> Result<f64> {
                    match header.format {
                        PlyFormat::Ascii => ascii.value(ty),
                        PlyFormat::BinaryLittleEndian => binary.value(ty),
                    }
                };
                match prop.kind {
                    PropertyKind::Scalar(ty) => {
                        let v = read(ty)?;
                        if let Some(col) = columns.get_mut(&prop.name) {
                            col.push(v);
                        }
                    }
                    PropertyKind::List { count, item } => {
                        let n = read(count)?;
                        if n < 0.0 {
                            return Err(Error::parse(binary.pos.max(ascii.pos), "negative list length"));
                        }
                        for _ in 0..n as usize {
                            read(item)?;
                        }
                    }
                }
            }
        }
        elements.insert(
            el.name.clone(),
            ElementData {
                count: el.count,
                columns,
            },
        );
    }
    Ok(PlyData { header, elements })
}

/// Column-oriented writer for a single `vertex` element.
pub struct PlyWriter {
    pub format: PlyFormat,
    pub comments: Vec<String>,
    pub properties: Vec<(String, ScalarType)>,
    pub columns: Vec<Vec<f64>>,
    pub count: usize,
}

impl PlyWriter {
    pub fn new(format: PlyFormat, count: usize) -> Self {
        Self {
            format,
            comments: Vec::new(),
            properties: Vec::new(),
            columns: Vec::new(),
            count,
        }
    }

    pub fn comment(&mut self, c: impl Into<String>) -> &mut Self {
        self.comments.push(c.into());
        self
    }

    pub fn property(&mut self, name: &str, ty: ScalarType, values: Vec<f64>) -> &mut Self {
        assert_eq!(values.len(), self.count, "column `{name}` has the wrong length");
        self.properties.push((name.to_string(), ty));
        self.columns.push(values);
        self
    }

    pub fn header(&self) -> String {
        let mut h = String::from("ply\n");
        h.push_str(match self.format {
            PlyFormat::Ascii => "format ascii 1.0\n",
            PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
        });
        for c in &self.comments {
            h.push_str(&format!("comment {c}\n"));
        }
        h.push_str(&format!("element vertex {}\n", self.count));
        for (name, ty) in &self.properties {
            h.push_str(&format!("property {} {name}\n", ty.name()));
        }
        h.push_str("end_header\n");
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header().into_bytes();
        match self.format {
            PlyFormat::BinaryLittleEndian => {
                let rs: usize = self.properties.iter().map(|(_, t)| t.size()).sum();
                out.reserve(rs * self.count);
                for i in 0..self.count {
                    for ((_, ty), col) in self.properties.iter().zip(&self.columns) {
                        ty.encode_le(col[i], &mut out);
                    }
                }
            }
            PlyFormat::Ascii => {
                let mut line = String::new();
                for i in 0..self.count {
                    line.clear();
                    for (j, ((_, ty), col)) in self.properties.iter().zip(&self.columns).enumerate() {
                        if j > 0 {
                            line.push(' ');
                        }
                        line.push_str(&ty.format_ascii(col[i]));
                    }
                    line.push('\n');
                    out.extend_from_slice(line.as_bytes());
                }
            }
        }
        out
    }
}
