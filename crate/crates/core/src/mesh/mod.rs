//! Indexed triangle meshes and the differential operators defined on them.
//!
//! A [`TriMesh`] is a plain vertex/face list. Loading from disk normalizes
//! the shape into the unit sphere (centroid at the origin, farthest vertex
//! at radius one) so that every tolerance downstream is scale-free.

mod graph;
mod io;
pub(crate) mod laplacian;
mod sampling;

pub use graph::EdgeGraph;
pub use io::{load_mesh, parse_obj, parse_off, read_mesh, write_obj};
pub use laplacian::{cotangent_laplacian, CotanLaplacian, CotanWeights, DEGENERATE_AREA};
pub use sampling::{sample_surface, PointCloud};

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// An indexed triangle surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Builds a mesh after checking that every face references valid,
    /// pairwise distinct vertices. No normalization is applied.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::EmptyMesh("vertices"));
        }
        if faces.is_empty() {
            return Err(Error::EmptyMesh("faces"));
        }
        let n = vertices.len();
        for (f, tri) in faces.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidArgument(format!(
                    "face {f} references vertex {bad}, mesh has {n}"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidArgument(format!(
                    "face {f} repeats a vertex: {tri:?}"
                )));
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidArgument("non-finite vertex coordinate".into()));
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Returns a copy of this mesh with the vertices replaced. The
    /// connectivity is shared, so the count must match.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.vertices.iter().fold(Vec3::zeros(), |acc, v| acc + v);
        sum / self.vertices.len() as f64
    }

    /// Translates the vertex centroid to the origin and scales so the
    /// farthest vertex lies on the unit sphere.
    pub fn normalize(&mut self) -> Result<()> {
        let centroid = self.centroid();
        for v in &mut self.vertices {
            *v -= centroid;
        }
        let radius = self
            .vertices
            .iter()
            .map(|v| v.norm())
            .fold(0.0_f64, f64::max);
        if radius <= 1e-300 {
            return Err(Error::DegenerateGeometry(
                "all vertices coincide; cannot normalize".into(),
            ));
        }
        for v in &mut self.vertices {
            *v /= radius;
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    pub fn face_positions(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_positions(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }
}

/// Unit face normals oriented by winding, plus the faces whose area is at
/// most [`DEGENERATE_AREA`]. Degenerate faces get a zero normal.
#[derive(Debug, Clone)]
pub struct FaceNormals {
    pub normals: Vec<Vec3>,
    pub degenerate: Vec<usize>,
}

pub fn face_normals(mesh: &TriMesh) -> FaceNormals {
    normals_of(mesh.vertices(), mesh.faces())
}

pub(crate) fn normals_of(vertices: &[Vec3], faces: &[[usize; 3]]) -> FaceNormals {
    let mut normals = Vec::with_capacity(faces.len());
    let mut degenerate = Vec::new();
    for (f, &[a, b, c]) in faces.iter().enumerate() {
        let cross = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        let norm = cross.norm();
        if 0.5 * norm <= DEGENERATE_AREA {
            normals.push(Vec3::zeros());
            degenerate.push(f);
        } else {
            normals.push(cross / norm);
        }
    }
    FaceNormals {
        normals,
        degenerate,
    }
}
