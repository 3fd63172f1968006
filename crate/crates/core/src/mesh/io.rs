//! Wavefront OBJ and OFF ingestion, OBJ output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

/// Reads an OBJ or OFF file (chosen by extension, falling back to content
/// sniffing) and normalizes it into the unit sphere.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    read_mesh(path)?.normalized()
}

/// [`load_mesh`] without the normalization.
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let is_off = match ext.as_deref() {
        Some("off") => true,
        Some("obj") => false,
        _ => text.trim_start().starts_with("OFF"),
    };
    if is_off {
        parse_off(&text, path)
    } else {
        parse_obj(&text, path)
    }
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_coords<'a>(
    mut tokens: impl Iterator<Item = &'a str>,
    path: &Path,
    line: usize,
) -> Result<Vec3> {
    let mut xyz = [0.0; 3];
    for slot in &mut xyz {
        let tok = tokens
            .next()
            .ok_or_else(|| format_err(path, line, "vertex needs three coordinates"))?;
        *slot = tok
            .parse()
            .map_err(|_| format_err(path, line, format!("bad coordinate {tok:?}")))?;
    }
    Ok(Vec3::from(xyz))
}

/// Wraps a mesh-construction error (bad index, repeated vertex) as a
/// format error of the file it came from.
fn into_format(err: Error, path: &Path) -> Error {
    match err {
        Error::InvalidArgument(msg) => format_err(path, 0, msg),
        other => other,
    }
}

/// Parses OBJ `v` and `f` records. Faces must be triangles; indices are
/// 1-based, negative indices are relative to the end of the vertex list,
/// and `v/vt/vn` index forms keep only the vertex index.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => vertices.push(parse_coords(tokens, path, line)?),
            Some("f") => {
                let idx: Vec<&str> = tokens.collect();
                if idx.len() != 3 {
                    return Err(format_err(
                        path,
                        line,
                        format!("only triangles are supported, face has {} corners", idx.len()),
                    ));
                }
                let mut tri = [0usize; 3];
                for (slot, tok) in tri.iter_mut().zip(&idx) {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| format_err(path, line, format!("bad face index {tok:?}")))?;
                    let resolved = match i {
                        0 => return Err(format_err(path, line, "face index 0 is invalid in OBJ")),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 {
                        return Err(format_err(path, line, format!("face index {i} out of range")));
                    }
                    *slot = resolved as usize;
                }
                // Forward references are legal in OBJ; range is checked after the loop.
                faces.push((line, tri));
            }
            _ => {}
        }
    }
    let n = vertices.len();
    for &(line, tri) in &faces {
        if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
            return Err(format_err(
                path,
                line,
                format!("face index {} exceeds vertex count {n}", bad + 1),
            ));
        }
    }
    let faces = faces.into_iter().map(|(_, t)| t).collect();
    TriMesh::new(vertices, faces).map_err(|e| into_format(e, path))
}

/// Parses an OFF file. Polygons with more than three corners are rejected.
pub fn parse_off(text: &str, path: &Path) -> Result<TriMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (line, header) = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty file"))?;
    let mut header_tokens = header.split_whitespace();
    if header_tokens.next() != Some("OFF") {
        return Err(format_err(path, line, "missing OFF header"));
    }
    // Counts may follow the keyword on the same line.
    let rest: Vec<&str> = header_tokens.collect();
    let (count_line, counts) = if rest.is_empty() {
        let (l, c) = lines
            .next()
            .ok_or_else(|| format_err(path, line, "missing element counts"))?;
        (l, c.split_whitespace().collect::<Vec<_>>())
    } else {
        (line, rest)
    };
    let parse_count = |tok: Option<&&str>| -> Result<usize> {
        tok.and_then(|t| t.parse().ok())
            .ok_or_else(|| format_err(path, count_line, "bad element counts"))
    };
    let nv = parse_count(counts.first())?;
    let nf = parse_count(counts.get(1))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, text) = lines
            .next()
            .ok_or_else(|| format_err(path, count_line, "file ends before all vertices"))?;
        vertices.push(parse_coords(text.split_whitespace(), path, l)?);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, text) = lines
            .next()
            .ok_or_else(|| format_err(path, count_line, "file ends before all faces"))?;
        let nums: Vec<usize> = text
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format_err(path, l, format!("bad index {t:?}"))))
            .collect::<Result<_>>()?;
        match nums.as_slice() {
            [3, a, b, c, ..] => {
                if let Some(&bad) = [a, b, c].into_iter().find(|&&v| v >= nv) {
                    return Err(format_err(
                        path,
                        l,
                        format!("face index {bad} exceeds vertex count {nv}"),
                    ));
                }
                faces.push([*a, *b, *c]);
            }
            [k, ..] => {
                return Err(format_err(
                    path,
                    l,
                    format!("only triangles are supported, face has {k} corners"),
                ))
            }
            [] => return Err(format_err(path, l, "empty face record")),
        }
    }
    TriMesh::new(vertices, faces).map_err(|e| into_format(e, path))
}

/// Writes `mesh` as OBJ. Coordinates use the shortest representation that
/// round-trips, so output is byte-stable for identical input.
pub fn write_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, obj_string(mesh)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn obj_string(mesh: &TriMesh) -> String {
    let mut out = String::with_capacity(mesh.vertex_count() * 40 + mesh.face_count() * 20);
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}
