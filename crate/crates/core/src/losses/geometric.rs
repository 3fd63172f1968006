//! Plausibility terms over a deformed mesh: face-normal agreement and
//! cotangent-Laplacian distortion, plus the weighted combination with the
//! reflection-symmetry term.

use super::chamfer::{symmetry_loss_with, PointLoss};
use super::{ChamferVariant, LossWeights};
use crate::error::{invalid, Error, Result};
use crate::mesh::laplacian::{corner_cot, unique_edges};
use crate::mesh::{normals_of, CotanWeights, TriMesh, Vec3, DEGENERATE_AREA};

/// Per-source data reused across evaluations: rest normals, rest cotangent
/// weights, and the edge opposite every face corner.
#[derive(Debug, Clone)]
pub struct GeometricReference {
    faces: Vec<[usize; 3]>,
    vertex_count: usize,
    normals: Vec<Vec3>,
    source_degenerate: Vec<bool>,
    weights: CotanWeights,
    corner_edges: Vec<[usize; 3]>,
}

impl GeometricReference {
    /// Fails if the source has a degenerate face.
    pub fn new(src: &TriMesh) -> Result<Self> {
        let weights = CotanWeights::compute(src.vertices(), src.faces())?;
        let normals = normals_of(src.vertices(), src.faces());
        let mut source_degenerate = vec![false; src.face_count()];
        for &f in &normals.degenerate {
            source_degenerate[f] = true;
        }
        let edges = unique_edges(src.faces());
        let edge_of = |i: usize, j: usize| {
            let key = if i < j { (i, j) } else { (j, i) };
            edges.binary_search(&key).expect("edge of a face")
        };
        let corner_edges = src
            .faces()
            .iter()
            .map(|t| [edge_of(t[1], t[2]), edge_of(t[2], t[0]), edge_of(t[0], t[1])])
            .collect();
        Ok(Self {
            faces: src.faces().to_vec(),
            vertex_count: src.vertex_count(),
            normals: normals.normals,
            source_degenerate,
            weights,
            corner_edges,
        })
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    fn check_len(&self, deformed: &[Vec3]) -> Result<()> {
        if deformed.len() != self.vertex_count {
            return Err(invalid(format!(
                "expected {} deformed vertices, got {}",
                self.vertex_count,
                deformed.len()
            )));
        }
        Ok(())
    }

    /// Mean over faces of `1 − n_src·n_def`. Degenerate deformed faces
    /// contribute 2 and are listed; degenerate source faces contribute 0.
    pub fn normal_loss(&self, deformed: &[Vec3]) -> Result<NormalLoss> {
        self.check_len(deformed)?;
        let scale = 1.0 / self.faces.len() as f64;
        let mut grad = vec![Vec3::zeros(); deformed.len()];
        let mut degenerate = Vec::new();
        let mut sum = 0.0;
        for (f, &[i0, i1, i2]) in self.faces.iter().enumerate() {
            if self.source_degenerate[f] {
                continue;
            }
            let a = deformed[i1] - deformed[i0];
            let b = deformed[i2] - deformed[i0];
            let c = a.cross(&b);
            let len = c.norm();
            if 0.5 * len <= DEGENERATE_AREA {
                sum += 2.0;
                degenerate.push(f);
                continue;
            }
            let n = c / len;
            let s = &self.normals[f];
            let dot = n.dot(s);
            sum += (1.0 - dot).max(0.0);
            // d(n·s)/dc, then through c = a × b.
            let k = (s - n * dot) / len;
            let d1 = b.cross(&k) * scale;
            let d2 = k.cross(&a) * scale;
            grad[i1] -= d1;
            grad[i2] -= d2;
            grad[i0] += d1 + d2;
        }
        Ok(NormalLoss {
            value: sum * scale,
            grad,
            degenerate,
        })
    }

    /// Deformed off-diagonal weights per edge and diagonal per vertex.
    fn deformed_weights(&self, x: &[Vec3]) -> Result<(Vec<[f64; 3]>, Vec<f64>, Vec<f64>)> {
        let cots = self.corner_cots(x)?;
        let mut w = vec![0.0; self.weights.edges.len()];
        let mut diag = vec![0.0; self.vertex_count];
        for (f, t) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let half = 0.5 * cots[f][k];
                w[self.corner_edges[f][k]] -= half;
                diag[t[(k + 1) % 3]] += half;
                diag[t[(k + 2) % 3]] += half;
            }
        }
        Ok((cots, w, diag))
    }

    /// L1 distance between the source and deformed cotangent matrices over
    /// their shared sparsity pattern, divided by the number of entries.
    pub fn laplacian_loss(&self, deformed: &[Vec3]) -> Result<PointLoss> {
        self.check_len(deformed)?;
        let (_, w, diag) = self.deformed_weights(deformed)?;
        let ne = w.len();
        let inv_n = 1.0 / self.weights.entry_count() as f64;
        let mut sum = 0.0;
        let mut g_vertex = vec![0.0; self.vertex_count];
        for v in 0..self.vertex_count {
            if self.weights.active[v] {
                let d = diag[v] - self.weights.diagonal[v];
                sum += d.abs();
                g_vertex[v] = sign(d) * inv_n;
            }
        }
        let mut g_edge = vec![0.0; ne];
        for e in 0..ne {
            let d = w[e] - self.weights.weights[e];
            sum += 2.0 * d.abs();
            let (i, j) = self.weights.edges[e];
            // The diagonal is minus the row sum of off-diagonals.
            g_edge[e] = 2.0 * sign(d) * inv_n - g_vertex[i] - g_vertex[j];
        }
        let mut grad = vec![Vec3::zeros(); self.vertex_count];
        for (f, t) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let dcot = -0.5 * g_edge[self.corner_edges[f][k]];
                if dcot == 0.0 {
                    continue;
                }
                let (apex, a, b) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                let (ga, gb) = cot_gradient(&deformed[apex], &deformed[a], &deformed[b]);
                grad[a] += ga * dcot;
                grad[b] += gb * dcot;
                grad[apex] -= (ga + gb) * dcot;
            }
        }
        Ok(PointLoss {
            value: sum * inv_n,
            grad,
        })
    }

    /// First-order model of the Laplacian entries about `deformed`, used to
    /// build curvature for the L1 term.
    pub(crate) fn laplacian_linearization(&self, deformed: &[Vec3]) -> Result<LaplacianLinearization> {
        self.check_len(deformed)?;
        let (_, w, diag) = self.deformed_weights(deformed)?;
        let mut edge_rows: Vec<Vec<(usize, Vec3)>> = vec![Vec::new(); w.len()];
        for (f, t) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (apex, a, b) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                let (ga, gb) = cot_gradient(&deformed[apex], &deformed[a], &deformed[b]);
                let row = &mut edge_rows[self.corner_edges[f][k]];
                row.push((a, ga * -0.5));
                row.push((b, gb * -0.5));
                row.push((apex, (ga + gb) * 0.5));
            }
        }
        Ok(LaplacianLinearization {
            edge_residual: w.iter().zip(&self.weights.weights).map(|(d, s)| d - s).collect(),
            diag_residual: diag
                .iter()
                .zip(&self.weights.diagonal)
                .zip(&self.weights.active)
                .map(|((d, s), &on)| if on { d - s } else { 0.0 })
                .collect(),
            edge_rows,
            edges: self.weights.edges.clone(),
            active: self.weights.active.clone(),
            entry_count: self.weights.entry_count(),
        })
    }

    /// Mean magnitude of the source Laplacian entries.
    pub(crate) fn laplacian_entry_scale(&self) -> f64 {
        let edges: f64 = self.weights.weights.iter().map(|w| 2.0 * w.abs()).sum();
        let diag: f64 = self
            .weights
            .diagonal
            .iter()
            .zip(&self.weights.active)
            .filter(|(_, &on)| on)
            .map(|(d, _)| d.abs())
            .sum();
        (edges + diag) / self.weights.entry_count() as f64
    }

    fn corner_cots(&self, x: &[Vec3]) -> Result<Vec<[f64; 3]>> {
        self.faces
            .iter()
            .enumerate()
            .map(|(f, t)| {
                let area = 0.5 * (x[t[1]] - x[t[0]]).cross(&(x[t[2]] - x[t[0]])).norm();
                if area <= DEGENERATE_AREA {
                    return Err(Error::DegenerateGeometry(format!(
                        "deformed face {f} has area {area:e}"
                    )));
                }
                Ok([0, 1, 2].map(|k| corner_cot(&x[t[k]], &x[t[(k + 1) % 3]], &x[t[(k + 2) % 3]])))
            })
            .collect()
    }

    /// Weighted symmetry, normal and Laplacian terms. The symmetry term is
    /// measured on `points`, the others on `vertices`. Terms with zero
    /// weight are skipped and reported as 0.
    pub fn evaluate(
        &self,
        vertices: &[Vec3],
        points: &[Vec3],
        weights: &LossWeights,
        variant: ChamferVariant,
    ) -> Result<GeometricLoss> {
        self.check_len(vertices)?;
        let mut out = GeometricLoss {
            total: 0.0,
            symmetry: 0.0,
            normal: 0.0,
            laplacian: 0.0,
            grad_vertices: vec![Vec3::zeros(); vertices.len()],
            grad_points: vec![Vec3::zeros(); points.len()],
            degenerate_faces: Vec::new(),
        };
        if weights.w_symm > 0.0 {
            let s = symmetry_loss_with(points, variant)?;
            out.symmetry = s.value;
            for (g, d) in out.grad_points.iter_mut().zip(&s.grad) {
                *g += d * weights.w_symm;
            }
        }
        if weights.w_nor > 0.0 {
            let n = self.normal_loss(vertices)?;
            out.normal = n.value;
            out.degenerate_faces = n.degenerate;
            for (g, d) in out.grad_vertices.iter_mut().zip(&n.grad) {
                *g += d * weights.w_nor;
            }
        }
        if weights.w_lap > 0.0 {
            let l = self.laplacian_loss(vertices)?;
            out.laplacian = l.value;
            for (g, d) in out.grad_vertices.iter_mut().zip(&l.grad) {
                *g += d * weights.w_lap;
            }
        }
        out.total =
            weights.w_symm * out.symmetry + weights.w_nor * out.normal + weights.w_lap * out.laplacian;
        Ok(out)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of the cotangent at `apex` with respect to `a` and `b`; the
/// apex gradient is minus their sum.
fn cot_gradient(apex: &Vec3, a: &Vec3, b: &Vec3) -> (Vec3, Vec3) {
    let u = a - apex;
    let v = b - apex;
    let c = u.cross(&v);
    let s = c.norm();
    let d = u.dot(&v);
    let s3 = s * s * s;
    let gu = v / s - v.cross(&c) * (d / s3);
    let gv = u / s - c.cross(&u) * (d / s3);
    (gu, gv)
}

pub(crate) struct LaplacianLinearization {
    /// Deformed minus source off-diagonal weight, per edge.
    pub edge_residual: Vec<f64>,
    /// Deformed minus source diagonal, per vertex (zero when inactive).
    pub diag_residual: Vec<f64>,
    /// Per edge, the gradient of its weight as (vertex, d/dx) pairs. A
    /// diagonal entry is minus the sum over its edges.
    pub edge_rows: Vec<Vec<(usize, Vec3)>>,
    pub edges: Vec<(usize, usize)>,
    pub active: Vec<bool>,
    pub entry_count: usize,
}

#[derive(Debug, Clone)]
pub struct NormalLoss {
    pub value: f64,
    pub grad: Vec<Vec3>,
    /// Deformed faces with area at most the degeneracy threshold.
    pub degenerate: Vec<usize>,
}

/// Weighted geometric loss with its unweighted terms.
#[derive(Debug, Clone)]
pub struct GeometricLoss {
    pub total: f64,
    pub symmetry: f64,
    pub normal: f64,
    pub laplacian: f64,
    pub grad_vertices: Vec<Vec3>,
    pub grad_points: Vec<Vec3>,
    pub degenerate_faces: Vec<usize>,
}

pub fn normal_loss(src: &TriMesh, deformed: &[Vec3]) -> Result<NormalLoss> {
    GeometricReference::new(src)?.normal_loss(deformed)
}

pub fn laplacian_loss(src: &TriMesh, deformed: &[Vec3]) -> Result<PointLoss> {
    GeometricReference::new(src)?.laplacian_loss(deformed)
}

/// See [`GeometricReference::evaluate`].
pub fn geometric_loss(
    src: &TriMesh,
    vertices: &[Vec3],
    points: &[Vec3],
    weights: &LossWeights,
) -> Result<GeometricLoss> {
    GeometricReference::new(src)?.evaluate(vertices, points, weights, ChamferVariant::Squared)
}
