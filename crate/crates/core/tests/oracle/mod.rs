//! Dense reference computations, written without the library's sparse
//! machinery.

#![allow(dead_code)]

use metaforge::{shapes, TriMesh};
use nalgebra::DMatrix;

/// The five test meshes, with a name for reporting.
pub fn coordinate_meshes() -> Vec<(&'static str, TriMesh)> {
    vec![
        ("triangle strip", shapes::triangle_strip(16)),
        ("icosphere 1", shapes::icosphere(1)),
        ("icosphere 2", shapes::icosphere(2)),
        ("box", shapes::box_mesh(3, [1.0, 0.7, 0.5])),
        ("open cylinder", shapes::open_cylinder(12, 5)),
    ]
}

/// Interior angle at corner `k` of face `f`.
fn angle(mesh: &TriMesh, f: usize, k: usize) -> f64 {
    let t = mesh.faces()[f];
    let p = mesh.vertices();
    let (o, a, b) = (p[t[k]], p[t[(k + 1) % 3]], p[t[(k + 2) % 3]]);
    let (u, v) = (a - o, b - o);
    (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos()
}

/// Dense cotangent stiffness `S` (positive diagonal) and lumped mass.
pub fn dense_laplacian(mesh: &TriMesh) -> (DMatrix<f64>, Vec<f64>) {
    let n = mesh.vertex_count();
    let mut s = DMatrix::zeros(n, n);
    let mut mass = vec![0.0; n];
    for f in 0..mesh.face_count() {
        let t = mesh.faces()[f];
        let area = mesh.face_area(f);
        for k in 0..3 {
            mass[t[k]] += area / 3.0;
            let (i, j) = (t[(k + 1) % 3], t[(k + 2) % 3]);
            let w = 0.5 / angle(mesh, f, k).tan();
            s[(i, j)] -= w;
            s[(j, i)] -= w;
            s[(i, i)] += w;
            s[(j, j)] += w;
        }
    }
    (s, mass)
}

/// Solves `A X = B` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: DMatrix<f64>, mut b: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        a.swap_rows(col, pivot);
        b.swap_rows(col, pivot);
        for row in col + 1..n {
            let factor = a[(row, col)] / a[(col, col)];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[(row, k)] -= factor * a[(col, k)];
            }
            for k in 0..b.ncols() {
                b[(row, k)] -= factor * b[(col, k)];
            }
        }
    }
    let mut x = DMatrix::zeros(n, b.ncols());
    for row in (0..n).rev() {
        for k in 0..b.ncols() {
            let tail: f64 = (row + 1..n).map(|j| a[(row, j)] * x[(j, k)]).sum();
            x[(row, k)] = (b[(row, k)] - tail) / a[(row, row)];
        }
    }
    x
}

/// Biharmonic weights from the dense system `S M⁻¹ S` restricted to the
/// free vertices.
pub fn dense_biharmonic(mesh: &TriMesh, controls: &[usize]) -> DMatrix<f64> {
    let n = mesh.vertex_count();
    let (s, mass) = dense_laplacian(mesh);
    let inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, mass.iter().map(|&m| 1.0 / m)));
    let a = &s * inv * &s;
    let free: Vec<usize> = (0..n).filter(|v| !controls.contains(v)).collect();
    let c = controls.len();
    let a_ff = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
    let rhs = DMatrix::from_fn(free.len(), c, |i, j| -a[(free[i], controls[j])]);
    let w_f = gauss_solve(a_ff, rhs);
    let mut w = DMatrix::zeros(n, c);
    for (j, &v) in controls.iter().enumerate() {
        w[(v, j)] = 1.0;
    }
    for (i, &v) in free.iter().enumerate() {
        for j in 0..c {
            w[(v, j)] = w_f[(i, j)];
        }
    }
    w
}
