//! Cotangent Laplacian and lumped mass.

use std::collections::BTreeMap;

use sprs::{CsMat, TriMat};

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

/// Faces with area at or below this are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Cotangent of the angle at `apex` in the triangle (`apex`, `a`, `b`).
pub(crate) fn corner_cot(apex: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let u = a - apex;
    let v = b - apex;
    u.dot(&v) / u.cross(&v).norm()
}

/// Per-edge cotangent weights over a fixed connectivity.
///
/// `edges` is sorted and unique with `i < j`; `weights[e]` is the
/// off-diagonal entry `L[i][j] = -(cot α + cot β) / 2` and `diagonal[v]`
/// is minus the sum of the off-diagonals in row `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct CotanWeights {
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub diagonal: Vec<f64>,
    /// Vertices referenced by at least one face.
    pub active: Vec<bool>,
}

impl CotanWeights {
    /// Computes the weights, failing on the first face whose area is at
    /// most [`DEGENERATE_AREA`].
    pub fn compute(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Self> {
        let edges = unique_edges(faces);
        let index: BTreeMap<(usize, usize), usize> =
            edges.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let mut weights = vec![0.0; edges.len()];
        let mut diagonal = vec![0.0; vertices.len()];
        let mut active = vec![false; vertices.len()];
        for (f, tri) in faces.iter().enumerate() {
            let [p0, p1, p2] = tri.map(|v| vertices[v]);
            let area = 0.5 * (p1 - p0).cross(&(p2 - p0)).norm();
            if area <= DEGENERATE_AREA {
                return Err(Error::DegenerateFace { face: f, area });
            }
            for k in 0..3 {
                let apex = tri[k];
                let i = tri[(k + 1) % 3];
                let j = tri[(k + 2) % 3];
                let half_cot = 0.5 * corner_cot(&vertices[apex], &vertices[i], &vertices[j]);
                weights[index[&ordered(i, j)]] -= half_cot;
                diagonal[i] += half_cot;
                diagonal[j] += half_cot;
                active[apex] = true;
            }
        }
        Ok(Self {
            edges,
            weights,
            diagonal,
            active,
        })
    }

    /// Number of structurally nonzero entries: one diagonal per active
    /// vertex plus both triangles of every edge.
    pub fn entry_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count() + 2 * self.edges.len()
    }
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

pub(crate) fn unique_edges(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|t| (0..3).map(move |k| ordered(t[k], t[(k + 1) % 3])))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// The cotangent stiffness matrix together with its lumped mass diagonal.
#[derive(Debug, Clone)]
pub struct CotanLaplacian {
    pub weights: CotanWeights,
    /// Symmetric n×n matrix in CSR layout.
    pub matrix: CsMat<f64>,
    /// One third of the incident triangle areas per vertex.
    pub mass: Vec<f64>,
}

impl CotanLaplacian {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    /// `L·x` for a dense vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (row, vec) in self.matrix.outer_iterator().enumerate() {
            out[row] = vec.iter().map(|(col, &v)| v * x[col]).sum();
        }
        out
    }
}

pub fn cotangent_laplacian(mesh: &TriMesh) -> Result<CotanLaplacian> {
    let weights = CotanWeights::compute(mesh.vertices(), mesh.faces())?;
    let n = mesh.vertex_count();
    let mut trip = TriMat::with_capacity((n, n), n + 2 * weights.edges.len());
    for (v, &d) in weights.diagonal.iter().enumerate() {
        if weights.active[v] {
            trip.add_triplet(v, v, d);
        }
    }
    for (&(i, j), &w) in weights.edges.iter().zip(&weights.weights) {
        trip.add_triplet(i, j, w);
        trip.add_triplet(j, i, w);
    }
    let mut mass = vec![0.0; n];
    for f in 0..mesh.face_count() {
        let third = mesh.face_area(f) / 3.0;
        for &v in &mesh.faces()[f] {
            mass[v] += third;
        }
    }
    Ok(CotanLaplacian {
        weights,
        matrix: trip.to_csr(),
        mass,
    })
}
