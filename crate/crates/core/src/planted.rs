//! Synthetic target families generated from known meta-handles, for
//! checking that discovery recovers what was planted.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::deform::{apply_subspace, DeformationSubspace, Domain, MetaHandle};
use crate::error::{invalid, Result};
use crate::fit::SourceShape;
use crate::mesh::Vec3;

/// Targets `g(a_k)` of a known subspace.
#[derive(Debug, Clone)]
pub struct PlantedFamily {
    pub truth: DeformationSubspace,
    /// Row k holds the coefficients of target k.
    pub coefficients: DMatrix<f64>,
    pub targets: Vec<Vec<Vec3>>,
}

/// Two unit handles with disjoint control supports: controls above the
/// xy-plane lift along z, controls below it spread along ±y. Both are
/// mirror-symmetric in x.
pub fn lift_and_spread_handles(src: &SourceShape) -> Result<[MetaHandle; 2]> {
    let rest = src.coords().controls().rest_positions();
    let c = rest.len();
    let lift = DMatrix::from_fn(c, 3, |j, k| if k == 2 && rest[j].z > 0.0 { 1.0 } else { 0.0 });
    let spread = DMatrix::from_fn(c, 3, |j, k| {
        if k == 1 && rest[j].z < 0.0 && rest[j].y != 0.0 {
            rest[j].y.signum()
        } else {
            0.0
        }
    });
    Ok([MetaHandle::normalized(lift)?, MetaHandle::normalized(spread)?])
}

/// Deforms the source cloud by `count` coefficient vectors drawn uniformly
/// in `[-amplitude, amplitude]` per handle.
pub fn planted_family(
    src: &SourceShape,
    handles: Vec<MetaHandle>,
    count: usize,
    amplitude: f64,
    seed: u64,
) -> Result<PlantedFamily> {
    if !(amplitude.is_finite() && amplitude >= 0.0) {
        return Err(invalid("amplitude must be non-negative"));
    }
    let m = handles.len();
    let truth = DeformationSubspace::new(handles, vec![(-amplitude, amplitude); m], src.coords().clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coefficients = DMatrix::from_fn(count, m, |_, _| amplitude * rng.gen_range(-1.0..=1.0));
    let targets = coefficients
        .row_iter()
        .map(|row| {
            let a: Vec<f64> = row.iter().copied().collect();
            apply_subspace(&truth, &a, src.points(), Domain::Points)
        })
        .collect::<Result<_>>()?;
    Ok(PlantedFamily {
        truth,
        coefficients,
        targets,
    })
}

/// Cosines of the principal angles between the spans of two handle sets,
/// largest first.
pub fn principal_cosines(a: &[MetaHandle], b: &[MetaHandle]) -> Vec<f64> {
    let basis = |hs: &[MetaHandle]| {
        let cols: Vec<_> = hs
            .iter()
            .map(|h| nalgebra::DVector::from_iterator(h.offsets().len(), h.offsets().transpose().iter().copied()))
            .collect();
        DMatrix::from_columns(&cols).qr().q()
    };
    let mut s: Vec<f64> = (basis(a).transpose() * basis(b))
        .singular_values()
        .iter()
        .map(|v| v.min(1.0))
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Best matching of recovered handles to the truth up to sign and
/// permutation: the smallest |cos| over matched pairs, maximized over
/// permutations. Requires equal counts of at most 8.
pub fn matched_cosine(recovered: &[MetaHandle], truth: &[MetaHandle]) -> Result<f64> {
    if recovered.len() != truth.len() || truth.len() > 8 {
        return Err(invalid("matching needs equal handle counts of at most 8"));
    }
    let cos = |p: &MetaHandle, q: &MetaHandle| p.offsets().dot(q.offsets()).abs();
    let n = truth.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = 0.0f64;
    loop {
        let worst = (0..n)
            .map(|i| cos(&recovered[i], &truth[perm[i]]))
            .fold(f64::INFINITY, f64::min);
        best = best.max(if n == 0 { 1.0 } else { worst });
        if !next_permutation(&mut perm) {
            return Ok(best);
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
