use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{Location, MeshError, TriMesh};

/// Mesh file formats understood by the loader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Ply,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(Self::Off),
            "ply" => Some(Self::Ply),
            "obj" => Some(Self::Obj),
            _ => None,
        }
    }
}

/// Loads and validates a mesh. Vertex order is preserved from the file.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh, MeshError> {
    let bytes = fs::read(path)?;
    read_mesh(&bytes, format)
}

/// Parses a mesh from an in-memory file image.
pub fn read_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriMesh, MeshError> {
    let raw = match format {
        MeshFormat::Off => parse_off(bytes)?,
        MeshFormat::Obj => parse_obj(bytes)?,
        MeshFormat::Ply => parse_ply(bytes)?,
    };
    TriMesh::with_locations(raw.vertices, raw.faces, &raw.locations)
}

#[derive(Default)]
struct RawMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    locations: Vec<Location>,
}

impl RawMesh {
    /// Fan-triangulates a polygon.
    fn push_polygon(&mut self, poly: &[usize], at: Location) -> Result<(), MeshError> {
        if poly.len() < 3 {
            return Err(MeshError::Parse {
                at,
                message: format!("face with {} vertices", poly.len()),
            });
        }
        for i in 1..poly.len() - 1 {
            self.faces.push([poly[0], poly[i], poly[i + 1]]);
            self.locations.push(at);
        }
        Ok(())
    }
}

fn parse_err(at: Location, message: impl Into<String>) -> MeshError {
    MeshError::Parse {
        at,
        message: message.into(),
    }
}

fn utf8(bytes: &[u8]) -> Result<&str, MeshError> {
    std::str::from_utf8(bytes).map_err(|e| parse_err(Location::Offset(e.valid_up_to() as u64), "invalid utf-8"))
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, at: Location, what: &str) -> Result<T, MeshError> {
    let tok = tok.ok_or_else(|| parse_err(at, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(at, format!("invalid {what} '{tok}'")))
}

fn parse_off(bytes: &[u8]) -> Result<RawMesh, MeshError> {
    let text = utf8(bytes)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| parse_err(Location::Line(1), "empty file"))?;
    let mut toks = header.split_whitespace();
    let magic = toks.next().unwrap_or("");
    if !magic.ends_with("OFF") {
        return Err(parse_err(Location::Line(hline), format!("expected OFF header, got '{magic}'")));
    }
    // Counts may follow the magic on the same line.
    let rest: Vec<&str> = toks.collect();
    let (cline, counts): (usize, Vec<&str>) = if rest.is_empty() {
        let (l, c) = lines
            .next()
            .ok_or_else(|| parse_err(Location::Line(hline + 1), "missing counts"))?;
        (l, c.split_whitespace().collect())
    } else {
        (hline, rest)
    };
    let at = Location::Line(cline);
    let nv: usize = parse_num(counts.first().copied(), at, "vertex count")?;
    let nf: usize = parse_num(counts.get(1).copied(), at, "face count")?;

    let mut raw = RawMesh::default();
    for _ in 0..nv {
        let (l, line) = lines
            .next()
            .ok_or_else(|| parse_err(Location::Line(cline), format!("expected {nv} vertices")))?;
        let at = Location::Line(l);
        let mut t = line.split_whitespace();
        let x = parse_num(t.next(), at, "coordinate")?;
        let y = parse_num(t.next(), at, "coordinate")?;
        let z = parse_num(t.next(), at, "coordinate")?;
        raw.vertices.push(Vector3::new(x, y, z));
    }
    for _ in 0..nf {
        let (l, line) = lines
            .next()
            .ok_or_else(|| parse_err(Location::Line(cline), format!("expected {nf} faces")))?;
        let at = Location::Line(l);
        let mut t = line.split_whitespace();
        let count: usize = parse_num(t.next(), at, "face arity")?;
        let poly = (0..count)
            .map(|_| parse_num(t.next(), at, "vertex index"))
            .collect::<Result<Vec<usize>, _>>()?;
        raw.push_polygon(&poly, at)?;
    }
    Ok(raw)
}

fn parse_obj(bytes: &[u8]) -> Result<RawMesh, MeshError> {
    let text = utf8(bytes)?;
    let mut raw = RawMesh::default();
    for (i, line) in text.lines().enumerate() {
        let at = Location::Line(i + 1);
        let line = line.split('#').next().unwrap_or("");
        let mut t = line.split_whitespace();
        match t.next() {
            Some("v") => {
                let x = parse_num(t.next(), at, "coordinate")?;
                let y = parse_num(t.next(), at, "coordinate")?;
                let z = parse_num(t.next(), at, "coordinate")?;
                raw.vertices.push(Vector3::new(x, y, z));
            }
            Some("f") => {
                let nv = raw.vertices.len() as i64;
                let poly = t
                    .map(|tok| {
                        let idx: i64 = parse_num(tok.split('/').next(), at, "vertex index")?;
                        let resolved = if idx < 0 { nv + idx } else { idx - 1 };
                        if idx == 0 || resolved < 0 {
                            return Err(parse_err(at, format!("invalid vertex index {idx}")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                raw.push_polygon(&poly, at)?;
            }
            _ => {}
        }
    }
    Ok(raw)
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
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar, String),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(_, n) | Property::List(_, _, n) => n,
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Streams property values for one element record, either from ascii
/// tokens or little-endian bytes.
enum Body<'a> {
    Ascii {
        lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
        first_line: usize,
    },
    Binary {
        data: &'a [u8],
        pos: usize,
        base: usize,
    },
}

impl Body<'_> {
    /// Reads one record, returning its values (lists are flattened after their count)
    /// and the record location.
    fn record(&mut self, props: &[Property]) -> Result<(Vec<Vec<f64>>, Location), MeshError> {
        match self {
            Body::Ascii { lines, first_line } => {
                let (i, line) = loop {
                    let (i, line) = lines
                        .next()
                        .ok_or_else(|| parse_err(Location::Unknown, "unexpected end of ply body"))?;
                    if !line.trim().is_empty() {
                        break (i, line);
                    }
                };
                let at = Location::Line(*first_line + i);
                let mut toks = line.split_whitespace();
                let mut out = Vec::with_capacity(props.len());
                for p in props {
                    match p {
                        Property::Scalar(..) => out.push(vec![parse_num(toks.next(), at, p.name())?]),
                        Property::List(..) => {
                            let n: usize = parse_num(toks.next(), at, "list length")?;
                            let vals = (0..n)
                                .map(|_| parse_num(toks.next(), at, p.name()))
                                .collect::<Result<Vec<f64>, _>>()?;
                            out.push(vals);
                        }
                    }
                }
                Ok((out, at))
            }
            Body::Binary { data, pos, base } => {
                let at = Location::Offset((*base + *pos) as u64);
                let mut take = |s: Scalar| -> Result<f64, MeshError> {
                    let end = *pos + s.size();
                    if end > data.len() {
                        return Err(parse_err(at, "unexpected end of binary ply body"));
                    }
                    let v = s.read_le(&data[*pos..end]);
                    *pos = end;
                    Ok(v)
                };
                let mut out = Vec::with_capacity(props.len());
                for p in props {
                    match p {
                        Property::Scalar(s, _) => out.push(vec![take(*s)?]),
                        Property::List(cs, is, _) => {
                            let n = take(*cs)?;
                            if n < 0.0 {
                                return Err(parse_err(at, "negative list length"));
                            }
                            let vals = (0..n as usize).map(|_| take(*is)).collect::<Result<Vec<_>, _>>()?;
                            out.push(vals);
                        }
                    }
                }
                Ok((out, at))
            }
        }
    }
}

fn parse_ply(bytes: &[u8]) -> Result<RawMesh, MeshError> {
    let marker = b"end_header";
    let hend = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| parse_err(Location::Line(1), "missing end_header"))?;
    let mut body_start = hend + marker.len();
    if bytes.get(body_start) == Some(&b'\r') {
        body_start += 1;
    }
    if bytes.get(body_start) == Some(&b'\n') {
        body_start += 1;
    }
    let header = utf8(&bytes[..hend])?;
    let header_lines = header.lines().count() + 1;

    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(Location::Line(1), "expected 'ply' magic")),
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in lines {
        let at = Location::Line(i + 1);
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.first().copied() {
            Some("format") => {
                binary = Some(match t.get(1).copied() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    other => {
                        return Err(MeshError::UnsupportedFormat(format!(
                            "ply format {}",
                            other.unwrap_or("<missing>")
                        )))
                    }
                });
            }
            Some("element") => {
                let name = t.get(1).ok_or_else(|| parse_err(at, "element without name"))?;
                let count = parse_num(t.get(2).copied(), at, "element count")?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(at, "property before element"))?;
                let ty = |s: Option<&&str>| {
                    s.and_then(|s| Scalar::parse(s))
                        .ok_or_else(|| parse_err(at, "unknown property type"))
                };
                let prop = if t.get(1) == Some(&"list") {
                    let name = t.get(4).ok_or_else(|| parse_err(at, "list without name"))?;
                    Property::List(ty(t.get(2))?, ty(t.get(3))?, name.to_string())
                } else {
                    let name = t.get(2).ok_or_else(|| parse_err(at, "property without name"))?;
                    Property::Scalar(ty(t.get(1))?, name.to_string())
                };
                el.properties.push(prop);
            }
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(parse_err(at, format!("unknown header keyword '{other}'"))),
        }
    }
    let binary = binary.ok_or_else(|| parse_err(Location::Line(2), "missing format line"))?;

    let data = &bytes[body_start..];
    let mut body = if binary {
        Body::Binary {
            data,
            pos: 0,
            base: body_start,
        }
    } else {
        Body::Ascii {
            lines: utf8(data)?.lines().enumerate().peekable(),
            first_line: header_lines + 1,
        }
    };

    let mut raw = RawMesh::default();
    for el in &elements {
        let find = |name: &str| el.properties.iter().position(|p| p.name() == name);
        match el.name.as_str() {
            "vertex" => {
                let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(parse_err(Location::Unknown, "vertex element lacks x/y/z")),
                };
                for _ in 0..el.count {
                    let (rec, _) = body.record(&el.properties)?;
                    raw.vertices.push(Vector3::new(rec[ix][0], rec[iy][0], rec[iz][0]));
                }
            }
            "face" => {
                let idx = find("vertex_indices")
                    .or_else(|| find("vertex_index"))
                    .ok_or_else(|| parse_err(Location::Unknown, "face element lacks vertex_indices"))?;
                for _ in 0..el.count {
                    let (rec, at) = body.record(&el.properties)?;
                    let poly = rec[idx]
                        .iter()
                        .map(|&v| {
                            if v < 0.0 || v.fract() != 0.0 {
                                Err(parse_err(at, format!("invalid vertex index {v}")))
                            } else {
                                Ok(v as usize)
                            }
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    raw.push_polygon(&poly, at)?;
                }
            }
            _ => {
                for _ in 0..el.count {
                    body.record(&el.properties)?;
                }
            }
        }
    }
    Ok(raw)
}

/// Writes an ascii OFF file.
pub fn write_off(path: &Path, mesh: &TriMesh) -> Result<(), MeshError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "OFF")?;
    writeln!(w, "{} {} 0", mesh.num_vertices(), mesh.num_faces())?;
    for v in mesh.vertices() {
        writeln!(w, "{:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for f in mesh.faces() {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes an ascii PLY file, optionally with per-vertex RGB colors.
pub fn write_ply(path: &Path, mesh: &TriMesh, colors: Option<&[[u8; 3]]>) -> Result<(), MeshError> {
    if let Some(c) = colors {
        assert_eq!(c.len(), mesh.num_vertices(), "one color per vertex");
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", mesh.num_vertices())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if colors.is_some() {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "element face {}", mesh.num_faces())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in mesh.vertices().iter().enumerate() {
        match colors {
            Some(c) => writeln!(w, "{:?} {:?} {:?} {} {} {}", v.x, v.y, v.z, c[i][0], c[i][1], c[i][2])?,
            None => writeln!(w, "{:?} {:?} {:?}", v.x, v.y, v.z)?,
        }
    }
    for f in mesh.faces() {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    w.flush()?;
    Ok(())
}
