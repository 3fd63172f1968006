//! Evaluation metrics: dense Chamfer between meshes, cotangent-Laplacian
//! distortion, and the coverage / minimum-matching-distance pair for sets
//! of shapes.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::losses::{chamfer, GeometricReference};
use crate::mesh::{sample_surface, TriMesh, Vec3};

/// Default sample count per mesh for [`eval_chamfer_dense`].
pub const DENSE_SAMPLES: usize = 100_000;

/// Chamfer distance between fresh area-uniform samples of two meshes. The
/// deformed side is drawn with `seed`, the target side with `seed + 1`.
pub fn eval_chamfer_dense(deformed: &TriMesh, target: &TriMesh, samples: usize, seed: u64) -> Result<f64> {
    let a = sample_surface(deformed, samples, seed)?;
    let b = sample_surface(target, samples, seed.wrapping_add(1))?;
    Ok(chamfer(&a.points, &b.points)?.value)
}

/// Same quantity as the Laplacian loss.
pub fn eval_cotlap_distortion(src: &TriMesh, deformed: &[Vec3]) -> Result<f64> {
    Ok(GeometricReference::new(src)?.laplacian_loss(deformed)?.value)
}

/// `|A|×|B|` table of Chamfer distances, computed in parallel over pairs.
pub fn pairwise_chamfer(a: &[Vec<Vec3>], b: &[Vec<Vec3>]) -> Result<DMatrix<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("pairwise Chamfer needs two non-empty sets"));
    }
    let pairs: Vec<(usize, usize)> = (0..a.len())
        .flat_map(|i| (0..b.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| chamfer(&a[i], &b[j]).map(|t| t.value))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_row_slice(a.len(), b.len(), &values))
}

/// Fraction of columns that are the nearest column of some row; ties go
/// to the smaller column index.
pub fn coverage_from_table(table: &DMatrix<f64>) -> f64 {
    let mut matched = vec![false; table.ncols()];
    for row in table.row_iter() {
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] < row[best] {
                best = j;
            }
        }
        matched[best] = true;
    }
    matched.iter().filter(|&&m| m).count() as f64 / table.ncols() as f64
}

/// Mean over columns of the smallest entry in that column.
pub fn mmd_from_table(table: &DMatrix<f64>) -> f64 {
    let sum: f64 = table.column_iter().map(|col| col.min()).sum();
    sum / table.ncols() as f64
}

/// Fraction of shapes in `b` that are the Chamfer-nearest match of some
/// shape in `a`.
pub fn coverage(a: &[Vec<Vec3>], b: &[Vec<Vec3>]) -> Result<f64> {
    Ok(coverage_from_table(&pairwise_chamfer(a, b)?))
}

/// Mean over `b` of the smallest Chamfer distance to any shape in `a`.
pub fn mmd(a: &[Vec<Vec3>], b: &[Vec<Vec3>]) -> Result<f64> {
    Ok(mmd_from_table(&pairwise_chamfer(a, b)?))
}

/// Set-level comparison of generated shapes against references.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub coverage: f64,
    pub mmd: f64,
    /// Row `i`, column `j`: Chamfer between generated `i` and reference `j`.
    pub table: DMatrix<f64>,
}

pub fn evaluate_sets(generated: &[Vec<Vec3>], reference: &[Vec<Vec3>]) -> Result<EvalReport> {
    let table = pairwise_chamfer(generated, reference)?;
    Ok(EvalReport {
        coverage: coverage_from_table(&table),
        mmd: mmd_from_table(&table),
        table,
    })
}
