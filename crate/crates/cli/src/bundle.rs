//! The deformation bundle: a source mesh with its control points,
//! coordinates, and optionally a meta-handle subspace.
//!
//! The binary encoding is a text header naming each field and its
//! dimensions, terminated by a `data` line, followed by the fields in
//! header order as little-endian 32-bit values. The text encoding is JSON
//! with the same field names.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use metaforge::{ControlPointSet, DeformCoordinates, DeformationSubspace, MetaHandle, TriMesh, Vec3};

use crate::error::{io_err, CliError, Result};

const MAGIC: &str = "metaforge-bundle";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeformationBundle {
    pub format: String,
    pub version: u32,
    pub vertices: Vec<[f32; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub control_indices: Vec<u32>,
    pub rest_positions: Vec<[f32; 3]>,
    /// n rows of c weights.
    pub coordinates: Vec<Vec<f32>>,
    /// m handles of c offsets each.
    pub meta_handles: Vec<Vec<[f32; 3]>>,
    pub ranges: Vec<[f32; 2]>,
    pub metadata: BTreeMap<String, String>,
}

/// Which encoding to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Binary,
    Text,
}

impl Encoding {
    pub fn text(flag: bool) -> Self {
        if flag {
            Encoding::Text
        } else {
            Encoding::Binary
        }
    }
}

fn vec3(v: &Vec3) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

impl DeformationBundle {
    /// Packs a mesh and its coordinates, with an optional subspace, at
    /// 32-bit precision.
    pub fn new(
        mesh: &TriMesh,
        coords: &DeformCoordinates,
        subspace: Option<&DeformationSubspace>,
        metadata: BTreeMap<String, String>,
    ) -> Self {
        let w = coords.vertex_weights();
        let (meta_handles, ranges) = match subspace {
            Some(s) => (
                s.handles()
                    .iter()
                    .map(|h| {
                        h.offsets()
                            .row_iter()
                            .map(|r| [r[0] as f32, r[1] as f32, r[2] as f32])
                            .collect()
                    })
                    .collect(),
                s.ranges().iter().map(|&(lo, hi)| [lo as f32, hi as f32]).collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        let vertices: Vec<[f32; 3]> = mesh.vertices().iter().map(vec3).collect();
        let control_indices: Vec<u32> = coords.controls().indices().iter().map(|&i| i as u32).collect();
        Self {
            format: MAGIC.to_string(),
            version: VERSION,
            rest_positions: control_indices.iter().map(|&i| vertices[i as usize]).collect(),
            vertices,
            faces: mesh
                .faces()
                .iter()
                .map(|f| [f[0] as u32, f[1] as u32, f[2] as u32])
                .collect(),
            control_indices,
            coordinates: w
                .row_iter()
                .map(|r| r.iter().map(|&x| x as f32).collect())
                .collect(),
            meta_handles,
            ranges,
            metadata,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn control_count(&self) -> usize {
        self.control_indices.len()
    }

    pub fn handle_count(&self) -> usize {
        self.meta_handles.len()
    }

    /// Checks every cross-dimension and value invariant. The message names
    /// the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.format != MAGIC {
            return Err(format!("format: expected {MAGIC:?}, found {:?}", self.format));
        }
        if self.version != VERSION {
            return Err(format!("version: unsupported {}", self.version));
        }
        let n = self.vertex_count();
        let c = self.control_count();
        let finite3 = |v: &[f32; 3]| v.iter().all(|x| x.is_finite());
        if n == 0 {
            return Err("vertices: empty".into());
        }
        if !self.vertices.iter().all(finite3) {
            return Err("vertices: non-finite value".into());
        }
        if self.faces.is_empty() {
            return Err("faces: empty".into());
        }
        if let Some(f) = self.faces.iter().position(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(format!("faces: face {f} indexes beyond {n} vertices"));
        }
        if c == 0 {
            return Err("control_indices: empty".into());
        }
        if let Some(&i) = self.control_indices.iter().find(|&&i| i as usize >= n) {
            return Err(format!("control_indices: {i} beyond {n} vertices"));
        }
        if self.rest_positions.len() != c {
            return Err(format!("rest_positions: {} rows for {c} controls", self.rest_positions.len()));
        }
        for (j, &i) in self.control_indices.iter().enumerate() {
            if self.rest_positions[j] != self.vertices[i as usize] {
                return Err(format!("rest_positions: row {j} differs from vertex {i}"));
            }
        }
        if self.coordinates.len() != n {
            return Err(format!("coordinates: {} rows for {n} vertices", self.coordinates.len()));
        }
        if let Some(r) = self.coordinates.iter().position(|row| row.len() != c) {
            return Err(format!("coordinates: row {r} has {} columns for {c} controls", self.coordinates[r].len()));
        }
        if self.coordinates.iter().flatten().any(|x| !x.is_finite()) {
            return Err("coordinates: non-finite value".into());
        }
        for (j, &i) in self.control_indices.iter().enumerate() {
            let row = &self.coordinates[i as usize];
            if row.iter().enumerate().any(|(k, &x)| x != if k == j { 1.0 } else { 0.0 }) {
                return Err(format!("coordinates: row of control {j} (vertex {i}) is not one-hot"));
            }
        }
        let m = self.handle_count();
        if let Some(h) = self.meta_handles.iter().position(|h| h.len() != c) {
            return Err(format!("meta_handles: handle {h} has {} rows for {c} controls", self.meta_handles[h].len()));
        }
        if !self.meta_handles.iter().flatten().all(finite3) {
            return Err("meta_handles: non-finite value".into());
        }
        if self.ranges.len() != m {
            return Err(format!("ranges: {} entries for {m} handles", self.ranges.len()));
        }
        if let Some(i) = self
            .ranges
            .iter()
            .position(|&[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= 0.0 && hi >= 0.0))
        {
            return Err(format!("ranges: entry {i} does not contain 0"));
        }
        Ok(())
    }

    pub fn mesh(&self) -> Result<TriMesh> {
        let vertices = self
            .vertices
            .iter()
            .map(|v| Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64))
            .collect();
        let faces = self
            .faces
            .iter()
            .map(|f| [f[0] as usize, f[1] as usize, f[2] as usize])
            .collect();
        Ok(TriMesh::new(vertices, faces)?)
    }

    pub fn coordinates(&self, mesh: &TriMesh) -> Result<DeformCoordinates> {
        let controls = ControlPointSet::new(mesh, self.control_indices.iter().map(|&i| i as usize).collect())?;
        let w = DMatrix::from_fn(self.vertex_count(), self.control_count(), |i, j| self.coordinates[i][j] as f64);
        Ok(DeformCoordinates::from_matrix(w, controls)?)
    }

    /// The stored subspace over `coords`; empty when the bundle has no
    /// meta-handles.
    pub fn subspace(&self, coords: &DeformCoordinates) -> Result<DeformationSubspace> {
        let handles = self
            .meta_handles
            .iter()
            .map(|h| MetaHandle::normalized(DMatrix::from_fn(h.len(), 3, |j, k| h[j][k] as f64)))
            .collect::<metaforge::Result<Vec<_>>>()?;
        let ranges = self.ranges.iter().map(|&[lo, hi]| (lo as f64, hi as f64)).collect();
        Ok(DeformationSubspace::new(handles, ranges, coords.clone())?)
    }

    pub fn to_bytes(&self, encoding: Encoding) -> Vec<u8> {
        match encoding {
            Encoding::Text => {
                let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
                s.push('\n');
                s.into_bytes()
            }
            Encoding::Binary => self.binary(),
        }
    }

    fn binary(&self) -> Vec<u8> {
        let (n, c, m) = (self.vertex_count(), self.control_count(), self.handle_count());
        let mut header = format!("{MAGIC} {VERSION}\nendian little\n");
        let fields = [
            format!("vertices f32 {n} 3"),
            format!("faces u32 {} 3", self.faces.len()),
            format!("control_indices u32 {c}"),
            format!("rest_positions f32 {c} 3"),
            format!("coordinates f32 {n} {c}"),
            format!("meta_handles f32 {m} {c} 3"),
            format!("ranges f32 {m} 2"),
        ];
        for f in fields {
            header.push_str("field ");
            header.push_str(&f);
            header.push('\n');
        }
        for (k, v) in &self.metadata {
            header.push_str(&format!("meta {} {}\n", k, serde_json::to_string(v).expect("string")));
        }
        header.push_str("data\n");
        let mut out = header.into_bytes();
        let f32s = |out: &mut Vec<u8>, xs: &mut dyn Iterator<Item = f32>| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        f32s(&mut out, &mut self.vertices.iter().flatten().copied());
        for x in self.faces.iter().flatten() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for x in &self.control_indices {
            out.extend_from_slice(&x.to_le_bytes());
        }
        f32s(&mut out, &mut self.rest_positions.iter().flatten().copied());
        f32s(&mut out, &mut self.coordinates.iter().flatten().copied());
        f32s(&mut out, &mut self.meta_handles.iter().flatten().flatten().copied());
        f32s(&mut out, &mut self.ranges.iter().flatten().copied());
        out
    }

    /// Parses either encoding and validates the result.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let bundle = if bytes.starts_with(MAGIC.as_bytes()) {
            parse_binary(bytes)?
        } else {
            serde_json::from_slice(bytes).map_err(|e| format!("text encoding: {e}"))?
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes).map_err(|message| CliError::Bundle {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn write(&self, path: &Path, encoding: Encoding) -> Result<()> {
        fs::write(path, self.to_bytes(encoding)).map_err(io_err(path))
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn word(&mut self, field: &str) -> std::result::Result<[u8; 4], String> {
        let end = self.pos + 4;
        let bytes = self
            .data
            .get(self.pos..end)
            .ok_or_else(|| format!("{field}: data ends early"))?;
        self.pos = end;
        Ok(bytes.try_into().expect("four bytes"))
    }

    fn f32(&mut self, field: &str) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.word(field)?))
    }

    fn u32(&mut self, field: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.word(field)?))
    }

    fn vec3s(&mut self, field: &str, count: usize) -> std::result::Result<Vec<[f32; 3]>, String> {
        (0..count)
            .map(|_| Ok([self.f32(field)?, self.f32(field)?, self.f32(field)?]))
            .collect()
    }
}

fn parse_binary(bytes: &[u8]) -> std::result::Result<DeformationBundle, String> {
    const EXPECTED: [(&str, &str, usize); 7] = [
        ("vertices", "f32", 2),
        ("faces", "u32", 2),
        ("control_indices", "u32", 1),
        ("rest_positions", "f32", 2),
        ("coordinates", "f32", 2),
        ("meta_handles", "f32", 3),
        ("ranges", "f32", 2),
    ];
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("header: missing data line")?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| "header: not UTF-8")?;
        pos += end + 1;
        if line == "data" {
            break;
        }
        lines.push(line.to_string());
    }
    let mut lines = lines.into_iter();
    let first = lines.next().unwrap_or_default();
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or("header: bad magic line")?;
    if lines.next().as_deref() != Some("endian little") {
        return Err("header: expected little-endian tag".into());
    }
    let mut dims = Vec::new();
    for (name, ty, rank) in EXPECTED {
        let line = lines.next().ok_or(format!("{name}: field missing from header"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 + rank || parts[0] != "field" || parts[1] != name || parts[2] != ty {
            return Err(format!("{name}: expected `field {name} {ty}` with {rank} dimensions, found {line:?}"));
        }
        let d: Vec<usize> = parts[3..]
            .iter()
            .map(|s| s.parse().map_err(|_| format!("{name}: bad dimension {s:?}")))
            .collect::<std::result::Result<_, _>>()?;
        dims.push(d);
    }
    let mut metadata = BTreeMap::new();
    for line in lines {
        let rest = line.strip_prefix("meta ").ok_or(format!("header: unexpected line {line:?}"))?;
        let (key, value) = rest.split_once(' ').ok_or(format!("header: bad meta line {line:?}"))?;
        let value: String = serde_json::from_str(value).map_err(|_| format!("metadata: bad value for {key}"))?;
        metadata.insert(key.to_string(), value);
    }

    let check = |name: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(format!("{name}: dimension {got}, expected {want}"))
        }
    };
    let n = dims[0][0];
    let c = dims[2][0];
    let m = dims[5][0];
    check("vertices", dims[0][1], 3)?;
    check("faces", dims[1][1], 3)?;
    check("rest_positions", dims[3][0], c)?;
    check("rest_positions", dims[3][1], 3)?;
    check("coordinates", dims[4][0], n)?;
    check("coordinates", dims[4][1], c)?;
    check("meta_handles", dims[5][1], c)?;
    check("meta_handles", dims[5][2], 3)?;
    check("ranges", dims[6][0], m)?;
    check("ranges", dims[6][1], 2)?;
    let expected_len = 4 * (3 * n + 3 * dims[1][0] + c + 3 * c + n * c + 3 * m * c + 2 * m);
    if bytes.len() - pos != expected_len {
        return Err(format!(
            "data: {} bytes, header declares {expected_len}",
            bytes.len() - pos
        ));
    }

    let mut r = Reader { data: bytes, pos };
    let vertices = r.vec3s("vertices", n)?;
    let faces = (0..dims[1][0])
        .map(|_| Ok([r.u32("faces")?, r.u32("faces")?, r.u32("faces")?]))
        .collect::<std::result::Result<_, String>>()?;
    let control_indices = (0..c).map(|_| r.u32("control_indices")).collect::<std::result::Result<_, _>>()?;
    let rest_positions = r.vec3s("rest_positions", c)?;
    let coordinates = (0..n)
        .map(|_| (0..c).map(|_| r.f32("coordinates")).collect())
        .collect::<std::result::Result<_, _>>()?;
    let meta_handles = (0..m)
        .map(|_| r.vec3s("meta_handles", c))
        .collect::<std::result::Result<_, _>>()?;
    let ranges = (0..m)
        .map(|_| Ok([r.f32("ranges")?, r.f32("ranges")?]))
        .collect::<std::result::Result<_, String>>()?;
    Ok(DeformationBundle {
        format: MAGIC.to_string(),
        version,
        vertices,
        faces,
        control_indices,
        rest_positions,
        coordinates,
        meta_handles,
        ranges,
        metadata,
    })
}
