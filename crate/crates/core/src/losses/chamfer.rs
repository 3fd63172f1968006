//! Chamfer distance with exact nearest neighbours.

use rayon::prelude::*;

use super::ChamferVariant;
use crate::error::{invalid, Result};
use crate::mesh::Vec3;
use crate::spatial::KdTree;

/// Nearest-neighbour assignments in both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondences {
    /// For each point of `A`, the index of its nearest point in `B`.
    pub a_to_b: Vec<usize>,
    /// For each point of `B`, the index of its nearest point in `A`.
    pub b_to_a: Vec<usize>,
}

impl Correspondences {
    pub fn compute(a: &[Vec3], b: &[Vec3]) -> Result<Self> {
        check_nonempty(a, b)?;
        let tree_b = KdTree::new(b);
        Ok(Self::with_tree(a, b, &tree_b))
    }

    /// Reuses a prebuilt tree over `b`, which must have been built from `b`.
    pub fn with_tree(a: &[Vec3], b: &[Vec3], tree_b: &KdTree<'_>) -> Self {
        let tree_a = KdTree::new(a);
        Self {
            a_to_b: nearest_all(a, tree_b),
            b_to_a: nearest_all(b, &tree_a),
        }
    }
}

fn nearest_all(queries: &[Vec3], tree: &KdTree<'_>) -> Vec<usize> {
    queries.par_iter().map(|q| tree.nearest(q).0).collect()
}

fn check_nonempty(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("chamfer distance of an empty point set"));
    }
    Ok(())
}

/// Chamfer value with gradients with respect to both point sets, taken
/// with the nearest-neighbour assignments held fixed.
#[derive(Debug, Clone)]
pub struct ChamferTerms {
    pub value: f64,
    pub grad_a: Vec<Vec3>,
    pub grad_b: Vec<Vec3>,
}

/// Squared-distance Chamfer: mean over `A` of the squared distance to the
/// nearest point of `B`, plus the same from `B` to `A`.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<ChamferTerms> {
    chamfer_with(a, b, ChamferVariant::Squared)
}

pub fn chamfer_with(a: &[Vec3], b: &[Vec3], variant: ChamferVariant) -> Result<ChamferTerms> {
    let corr = Correspondences::compute(a, b)?;
    Ok(chamfer_fixed(a, b, &corr, variant))
}

/// Chamfer under the given assignments. These need not be nearest
/// neighbours, which makes this the majorizer used during fitting.
pub fn chamfer_fixed(
    a: &[Vec3],
    b: &[Vec3],
    corr: &Correspondences,
    variant: ChamferVariant,
) -> ChamferTerms {
    let mut grad_a = vec![Vec3::zeros(); a.len()];
    let mut grad_b = vec![Vec3::zeros(); b.len()];
    let forward = one_side(a, b, &corr.a_to_b, variant, &mut grad_a, &mut grad_b);
    let backward = one_side(b, a, &corr.b_to_a, variant, &mut grad_b, &mut grad_a);
    ChamferTerms {
        value: forward + backward,
        grad_a,
        grad_b,
    }
}

/// `(1/|P|) Σ_p d(p, Q[match[p]])`, accumulating the gradient into both sides.
fn one_side(
    p: &[Vec3],
    q: &[Vec3],
    matches: &[usize],
    variant: ChamferVariant,
    grad_p: &mut [Vec3],
    grad_q: &mut [Vec3],
) -> f64 {
    let scale = 1.0 / p.len() as f64;
    let mut sum = 0.0;
    for (i, (pi, &j)) in p.iter().zip(matches).enumerate() {
        let diff = pi - q[j];
        let (value, g) = match variant {
            ChamferVariant::Squared => (diff.norm_squared(), diff * 2.0),
            ChamferVariant::Unsquared => {
                let d = diff.norm();
                let g = if d > 0.0 { diff / d } else { Vec3::zeros() };
                (d, g)
            }
        };
        sum += value;
        grad_p[i] += g * scale;
        grad_q[j] -= g * scale;
    }
    sum * scale
}

/// Mirror image across the `x = 0` plane.
pub fn reflect_x(p: &Vec3) -> Vec3 {
    Vec3::new(-p.x, p.y, p.z)
}

/// Value and gradient of a loss over a point set.
#[derive(Debug, Clone)]
pub struct PointLoss {
    pub value: f64,
    pub grad: Vec<Vec3>,
}

/// `chamfer(P, reflect_x(P))`, differentiated through both arguments.
pub fn symmetry_loss(cloud: &[Vec3]) -> Result<PointLoss> {
    symmetry_loss_with(cloud, ChamferVariant::Squared)
}

pub fn symmetry_loss_with(cloud: &[Vec3], variant: ChamferVariant) -> Result<PointLoss> {
    let mirrored: Vec<Vec3> = cloud.iter().map(reflect_x).collect();
    let terms = chamfer_with(cloud, &mirrored, variant)?;
    let grad = terms
        .grad_a
        .iter()
        .zip(&terms.grad_b)
        .map(|(ga, gb)| ga + reflect_x(gb))
        .collect();
    Ok(PointLoss {
        value: terms.value,
        grad,
    })
}
