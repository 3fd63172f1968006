//! Small procedural meshes used by tests, examples and the planted-model
//! experiments. Every generator returns a mesh already normalized into the
//! unit sphere.

use std::collections::HashMap;

use crate::mesh::{TriMesh, Vec3};

fn finish(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> TriMesh {
    TriMesh::new(vertices, faces)
        .and_then(TriMesh::normalized)
        .expect("procedural mesh is valid")
}

/// Icosahedron refined `subdivisions` times by edge midpoints, projected to
/// the unit sphere. Level 0 has 12 vertices, level 1 has 42, level 2 has 162.
pub fn icosphere(subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    finish(vertices, faces)
}

/// Closed axis-aligned cube surface with a `k`×`k` grid on each side,
/// outward-oriented.
pub fn cube(k: usize) -> TriMesh {
    box_mesh(k, [1.0, 1.0, 1.0])
}

/// Closed box with half-extents `extent` and a `k`×`k` grid on each side.
pub fn box_mesh(k: usize, extent: [f64; 3]) -> TriMesh {
    assert!(k >= 1);
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vertex = |lattice: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(lattice).or_insert_with(|| {
            let p = Vec3::from_fn(|d, _| (lattice[d] as f64 / k as f64 * 2.0 - 1.0) * extent[d]);
            vertices.push(p);
            vertices.len() - 1
        })
    };
    for axis in 0..3 {
        for positive in [false, true] {
            let (u, v) = if positive {
                ((axis + 1) % 3, (axis + 2) % 3)
            } else {
                ((axis + 2) % 3, (axis + 1) % 3)
            };
            let fixed = if positive { k } else { 0 };
            let at = |s: usize, t: usize| {
                let mut l = [0; 3];
                l[axis] = fixed;
                l[u] = s;
                l[v] = t;
                l
            };
            for s in 0..k {
                for t in 0..k {
                    let a = vertex(at(s, t), &mut vertices);
                    let b = vertex(at(s + 1, t), &mut vertices);
                    let c = vertex(at(s + 1, t + 1), &mut vertices);
                    let d = vertex(at(s, t + 1), &mut vertices);
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                }
            }
        }
    }
    finish(vertices, faces)
}

/// Open cylinder (no caps) around the z axis: `rings + 1` circles of
/// `segments` vertices each.
pub fn open_cylinder(segments: usize, rings: usize) -> TriMesh {
    assert!(segments >= 3 && rings >= 1);
    let mut vertices = Vec::with_capacity(segments * (rings + 1));
    for r in 0..=rings {
        let z = r as f64 / rings as f64 * 2.0 - 1.0;
        for s in 0..segments {
            let theta = s as f64 / segments as f64 * std::f64::consts::TAU;
            vertices.push(Vec3::new(theta.cos(), theta.sin(), z));
        }
    }
    let id = |r: usize, s: usize| r * segments + s % segments;
    let mut faces = Vec::with_capacity(2 * segments * rings);
    for r in 0..rings {
        for s in 0..segments {
            faces.push([id(r, s), id(r, s + 1), id(r + 1, s + 1)]);
            faces.push([id(r, s), id(r + 1, s + 1), id(r + 1, s)]);
        }
    }
    finish(vertices, faces)
}

/// Planar strip of `triangles` consistently oriented triangles over
/// `triangles + 2` vertices alternating between two rows.
pub fn triangle_strip(triangles: usize) -> TriMesh {
    assert!(triangles >= 1);
    let vertices = (0..triangles + 2)
        .map(|k| Vec3::new(k as f64 * 0.5, (k % 2) as f64, 0.0))
        .collect();
    let faces = (0..triangles)
        .map(|k| {
            if k % 2 == 0 {
                [k, k + 2, k + 1]
            } else {
                [k, k + 1, k + 2]
            }
        })
        .collect();
    finish(vertices, faces)
}

/// Regular tetrahedron.
pub fn tetrahedron() -> TriMesh {
    let vertices = vec![
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(1.0, -1.0, -1.0),
        Vec3::new(-1.0, 1.0, -1.0),
        Vec3::new(-1.0, -1.0, 1.0),
    ];
    finish(vertices, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
}
