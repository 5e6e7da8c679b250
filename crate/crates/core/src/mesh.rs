//! Indexed triangle meshes, topology checks, and OBJ/PLY file I/O.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Indexed triangle mesh in scene units (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for v in &self.vertices {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::DegenerateMesh("non-finite vertex coordinate".into()));
            }
        }
        for t in &self.triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::DegenerateMesh(format!(
                    "triangle index {} out of range ({} vertices)",
                    t.iter().max().unwrap(),
                    n
                )));
            }
        }
        Ok(())
    }

    /// Watertight and consistently oriented: every directed edge appears
    /// exactly once, so every undirected edge is shared by exactly two
    /// triangles with opposite orientation.
    pub fn check_watertight(&self) -> Result<()> {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                if e.0 == e.1 {
                    return Err(Error::NotWatertight("degenerate edge".into()));
                }
                *directed.entry(e).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(Error::NotWatertight(format!(
                    "directed edge ({a}, {b}) appears {count} times"
                )));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(Error::NotWatertight(format!(
                    "edge ({a}, {b}) has no opposite twin"
                )));
            }
        }
        Ok(())
    }

    pub fn is_watertight(&self) -> bool {
        self.check_watertight().is_ok()
    }

    /// V − E + F with E counted over undirected edges.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.triangles.len() as i64
    }

    /// Signed volume via the divergence theorem; positive for outward-wound
    /// closed surfaces.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let a = &self.vertices[t[0] as usize];
                let b = &self.vertices[t[1] as usize];
                let c = &self.vertices[t[2] as usize];
                a.dot(&b.cross(c)) / 6.0
            })
            .sum()
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let a = &self.vertices[t[0] as usize];
        let b = &self.vertices[t[1] as usize];
        let c = &self.vertices[t[2] as usize];
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Area-weighted uniform surface samples.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vector3<f64>> {
        assert!(!self.triangles.is_empty(), "cannot sample an empty mesh");
        let areas: Vec<f64> = self.triangles.iter().map(|t| self.triangle_area(t)).collect();
        let total: f64 = areas.iter().sum();
        let mut cumulative = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a;
            cumulative.push(acc);
        }
        (0..n)
            .map(|_| {
                let pick = rng.gen_range(0.0..total);
                let idx = cumulative.partition_point(|&c| c < pick).min(areas.len() - 1);
                let t = &self.triangles[idx];
                let a = &self.vertices[t[0] as usize];
                let b = &self.vertices[t[1] as usize];
                let c = &self.vertices[t[2] as usize];
                let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect()
    }

    pub fn save_obj(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("v {:.17} {:.17} {:.17}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Loads an ASCII OBJ; polygonal faces are fan-triangulated.
    pub fn load_obj(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line_no = line_no + 1;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let coords: Vec<f64> = parts
                        .take(3)
                        .map(|p| p.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Parse {
                            path: path.into(),
                            line: line_no,
                            message: format!("bad vertex coordinate: {e}"),
                        })?;
                    if coords.len() != 3 {
                        return Err(Error::Parse {
                            path: path.into(),
                            line: line_no,
                            message: "vertex needs 3 coordinates".into(),
                        });
                    }
                    vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = parts
                        .map(|p| {
                            let first = p.split('/').next().unwrap_or(p);
                            first.parse::<i64>().map_err(|e| Error::Parse {
                                path: path.into(),
                                line: line_no,
                                message: format!("bad face index: {e}"),
                            })
                        })
                        .collect::<Result<Vec<i64>>>()?
                        .into_iter()
                        .map(|i| {
                            if i >= 1 {
                                Ok((i - 1) as u32)
                            } else {
                                Err(Error::Parse {
                                    path: path.into(),
                                    line: line_no,
                                    message: format!("unsupported face index {i}"),
                                })
                            }
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(Error::Parse {
                            path: path.into(),
                            line: line_no,
                            message: "face needs at least 3 indices".into(),
                        });
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        TriangleMesh::new(vertices, triangles)
    }

    /// Binary little-endian PLY with double-precision vertices.
    pub fn save_ply(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        let header = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property double x\nproperty double y\nproperty double z\n\
             element face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        );
        buf.extend_from_slice(header.as_bytes());
        for v in &self.vertices {
            for k in 0..3 {
                buf.extend_from_slice(&v[k].to_le_bytes());
            }
        }
        for t in &self.triangles {
            buf.push(3u8);
            for &i in t {
                buf.extend_from_slice(&(i as i32).to_le_bytes());
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load_ply(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_ply(&data, path)
    }

    /// Dispatches on the file extension (`.obj` / `.ply`).
    pub fn load(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("obj") => Self::load_obj(path),
            Some("ply") => Self::load_ply(path),
            other => Err(Error::InvalidParameter(format!(
                "unsupported mesh extension {other:?} for {}",
                path.display()
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("obj") => self.save_obj(path),
            Some("ply") => self.save_ply(path),
            other => Err(Error::InvalidParameter(format!(
                "unsupported mesh extension {other:?} for {}",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyType {
    F32,
    F64,
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::F32 | PlyType::I32 | PlyType::U32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_f64(self, bytes: &[u8]) -> f64 {
        match self {
            PlyType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            PlyType::I8 => bytes[0] as i8 as f64,
            PlyType::U8 => bytes[0] as f64,
            PlyType::I16 => i16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            PlyType::U16 => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            PlyType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            PlyType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        }
    }
}

fn parse_ply(data: &[u8], path: &Path) -> Result<TriangleMesh> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };

    // Header is ASCII lines terminated by "end_header".
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut lines = Vec::new();
    while pos < data.len() {
        let end = data[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| parse_err(line_no, "missing end_header".into()))?;
        let line = std::str::from_utf8(&data[pos..end])
            .map_err(|_| parse_err(line_no + 1, "non-utf8 header".into()))?
            .trim()
            .to_string();
        pos = end + 1;
        line_no += 1;
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(parse_err(1, "missing ply magic".into()));
    }

    let mut format_binary = None;
    struct Element {
        name: String,
        count: usize,
        properties: Vec<(String, PlyType, Option<PlyType>)>,
    }
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.first() {
            Some(&"format") => {
                format_binary = match parts.get(1) {
                    Some(&"binary_little_endian") => Some(true),
                    Some(&"ascii") => Some(false),
                    other => {
                        return Err(parse_err(i + 1, format!("unsupported format {other:?}")))
                    }
                };
            }
            Some(&"element") => {
                let count = parts
                    .get(2)
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(i + 1, "bad element count".into()))?;
                elements.push(Element {
                    name: parts.get(1).unwrap_or(&"").to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some(&"property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(i + 1, "property before element".into()))?;
                if parts.get(1) == Some(&"list") {
                    let count_ty = PlyType::parse(parts[2])
                        .ok_or_else(|| parse_err(i + 1, "bad list count type".into()))?;
                    let item_ty = PlyType::parse(parts[3])
                        .ok_or_else(|| parse_err(i + 1, "bad list item type".into()))?;
                    element.properties.push((
                        parts.get(4).unwrap_or(&"").to_string(),
                        item_ty,
                        Some(count_ty),
                    ));
                } else {
                    let ty = PlyType::parse(parts[1])
                        .ok_or_else(|| parse_err(i + 1, "bad property type".into()))?;
                    element
                        .properties
                        .push((parts.get(2).unwrap_or(&"").to_string(), ty, None));
                }
            }
            _ => {}
        }
    }
    let binary =
        format_binary.ok_or_else(|| parse_err(1, "missing format declaration".into()))?;

    let mut vertices = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    if binary {
        let mut cursor = pos;
        for element in &elements {
            for _ in 0..element.count {
                let mut xyz = [0.0f64; 3];
                let mut face: Vec<u32> = Vec::new();
                for (name, ty, list) in &element.properties {
                    if let Some(count_ty) = list {
                        let csz = count_ty.size();
                        if cursor + csz > data.len() {
                            return Err(parse_err(line_no, "truncated list count".into()));
                        }
                        let count = count_ty.read_f64(&data[cursor..]) as usize;
                        cursor += csz;
                        for _ in 0..count {
                            let isz = ty.size();
                            if cursor + isz > data.len() {
                                return Err(parse_err(line_no, "truncated list item".into()));
                            }
                            face.push(ty.read_f64(&data[cursor..]) as u32);
                            cursor += isz;
                        }
                    } else {
                        let sz = ty.size();
                        if cursor + sz > data.len() {
                            return Err(parse_err(line_no, "truncated property".into()));
                        }
                        let value = ty.read_f64(&data[cursor..]);
                        cursor += sz;
                        match name.as_str() {
                            "x" => xyz[0] = value,
                            "y" => xyz[1] = value,
                            "z" => xyz[2] = value,
                            _ => {}
                        }
                    }
                }
                if element.name == "vertex" {
                    vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
                } else if element.name == "face" && face.len() >= 3 {
                    for k in 1..face.len() - 1 {
                        triangles.push([face[0], face[k], face[k + 1]]);
                    }
                }
            }
        }
    } else {
        let body = std::str::from_utf8(&data[pos..])
            .map_err(|_| parse_err(line_no, "non-utf8 ascii body".into()))?;
        let mut rows = body.lines();
        for element in &elements {
            for _ in 0..element.count {
                line_no += 1;
                let row = rows
                    .next()
                    .ok_or_else(|| parse_err(line_no, "missing data row".into()))?;
                let mut fields = row.split_whitespace();
                let mut xyz = [0.0f64; 3];
                let mut face: Vec<u32> = Vec::new();
                for (name, _ty, list) in &element.properties {
                    if list.is_some() {
                        let count: usize = fields
                            .next()
                            .and_then(|f| f.parse().ok())
                            .ok_or_else(|| parse_err(line_no, "bad list count".into()))?;
                        for _ in 0..count {
                            let idx: u32 = fields
                                .next()
                                .and_then(|f| f.parse().ok())
                                .ok_or_else(|| parse_err(line_no, "bad list item".into()))?;
                            face.push(idx);
                        }
                    } else {
                        let value: f64 = fields
                            .next()
                            .and_then(|f| f.parse().ok())
                            .ok_or_else(|| parse_err(line_no, "bad property value".into()))?;
                        match name.as_str() {
                            "x" => xyz[0] = value,
                            "y" => xyz[1] = value,
                            "z" => xyz[2] = value,
                            _ => {}
                        }
                    }
                }
                if element.name == "vertex" {
                    vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
                } else if element.name == "face" && face.len() >= 3 {
                    for k in 1..face.len() - 1 {
                        triangles.push([face[0], face[k], face[k + 1]]);
                    }
                }
            }
        }
    }

    TriangleMesh::new(vertices, triangles)
}

/// Writes a vertex-only binary PLY (used for point clouds).
pub fn save_points_ply(points: &[Vector3<f64>], path: &Path) -> Result<()> {
    let mesh = TriangleMesh {
        vertices: points.to_vec(),
        triangles: Vec::new(),
    };
    mesh.save_ply(path)
}

/// Reads vertices from an OBJ or PLY without requiring faces.
pub fn load_points(path: &Path) -> Result<Vec<Vector3<f64>>> {
    Ok(TriangleMesh::load(path)?.vertices)
}

// Re-exported for callers that want buffered streaming writes later.
#[allow(unused)]
fn write_all(path: &Path, mut w: impl Write, data: &[u8]) -> Result<()> {
    w.write_all(data).map_err(|e| Error::io(path, e))
}

#[allow(unused)]
fn read_exact(path: &Path, mut r: impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}
