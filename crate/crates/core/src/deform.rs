//! Handle-driven deformation in displacement form.
//!
//! A full control offset `Δ` (c×3) moves positions `X` to `X + W·Δ`. A
//! deformation subspace restricts `Δ` to `Σ aᵢ Mᵢ` over unit-norm
//! meta-handles `Mᵢ`, with each coefficient confined to `[Lᵢ, Rᵢ]`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::handles::DeformCoordinates;
use crate::mesh::Vec3;

/// Default number of meta-handles.
pub const DEFAULT_HANDLE_COUNT: usize = 15;

/// Per-control translation offsets with unit Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaHandle {
    offsets: DMatrix<f64>,
}

impl MetaHandle {
    /// Scales `offsets` (c×3) to unit Frobenius norm. Fails on a zero matrix.
    pub fn normalized(offsets: DMatrix<f64>) -> Result<Self> {
        if offsets.ncols() != 3 {
            return Err(invalid(format!("meta-handle needs 3 columns, got {}", offsets.ncols())));
        }
        let norm = offsets.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(invalid("meta-handle offsets must be finite and nonzero"));
        }
        Ok(Self {
            offsets: offsets / norm,
        })
    }

    pub fn offsets(&self) -> &DMatrix<f64> {
        &self.offsets
    }

    pub fn control_count(&self) -> usize {
        self.offsets.nrows()
    }
}

/// Coefficients along the meta-handles of a subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients(pub Vec<f64>);

impl Coefficients {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for Coefficients {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Which weight matrix of the coordinates to deform with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Vertices,
    Points,
}

/// Meta-handles with coefficient ranges over one set of coordinates.
#[derive(Debug, Clone)]
pub struct DeformationSubspace {
    handles: Vec<MetaHandle>,
    ranges: Vec<(f64, f64)>,
    coords: DeformCoordinates,
}

impl DeformationSubspace {
    pub fn new(
        handles: Vec<MetaHandle>,
        ranges: Vec<(f64, f64)>,
        coords: DeformCoordinates,
    ) -> Result<Self> {
        if handles.len() != ranges.len() {
            return Err(invalid(format!(
                "{} handles but {} ranges",
                handles.len(),
                ranges.len()
            )));
        }
        let c = coords.control_count();
        for (i, h) in handles.iter().enumerate() {
            if h.control_count() != c {
                return Err(invalid(format!(
                    "handle {i} has {} rows for {c} controls",
                    h.control_count()
                )));
            }
        }
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= 0.0 && hi >= 0.0) {
                return Err(invalid(format!("range {i} [{lo}, {hi}] must contain 0")));
            }
        }
        Ok(Self {
            handles,
            ranges,
            coords,
        })
    }

    pub fn handles(&self) -> &[MetaHandle] {
        &self.handles
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn coords(&self) -> &DeformCoordinates {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    /// `Σ aᵢ Mᵢ` as a c×3 matrix.
    pub fn offsets(&self, a: &[f64]) -> Result<DMatrix<f64>> {
        if a.len() != self.handles.len() {
            return Err(invalid(format!(
                "expected {} coefficients, got {}",
                self.handles.len(),
                a.len()
            )));
        }
        let mut delta = DMatrix::zeros(self.coords.control_count(), 3);
        for (h, &ai) in self.handles.iter().zip(a) {
            if ai != 0.0 {
                delta += h.offsets() * ai;
            }
        }
        Ok(delta)
    }

    pub fn weights(&self, domain: Domain) -> Result<&DMatrix<f64>> {
        match domain {
            Domain::Vertices => Ok(self.coords.vertex_weights()),
            Domain::Points => self
                .coords
                .point_weights()
                .ok_or_else(|| invalid("coordinates were not interpolated to a point cloud")),
        }
    }

    pub fn with_ranges(&self, ranges: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(self.handles.clone(), ranges, self.coords.clone())
    }
}

/// `X + W·Δ`. Returns `positions` unchanged when `delta` is zero.
pub fn apply_control_offsets(
    positions: &[Vec3],
    weights: &DMatrix<f64>,
    delta: &DMatrix<f64>,
) -> Result<Vec<Vec3>> {
    if weights.nrows() != positions.len() {
        return Err(invalid(format!(
            "weight matrix has {} rows for {} positions",
            weights.nrows(),
            positions.len()
        )));
    }
    if delta.nrows() != weights.ncols() || delta.ncols() != 3 {
        return Err(invalid(format!(
            "offsets are {}×{}, expected {}×3",
            delta.nrows(),
            delta.ncols(),
            weights.ncols()
        )));
    }
    if delta.iter().all(|&x| x == 0.0) {
        return Ok(positions.to_vec());
    }
    let moved = weights * delta;
    Ok(positions
        .iter()
        .enumerate()
        .map(|(i, p)| p + Vec3::new(moved[(i, 0)], moved[(i, 1)], moved[(i, 2)]))
        .collect())
}

/// Deforms `positions` (mesh vertices or sampled points, per `domain`) by
/// the subspace combination `a`.
pub fn apply_subspace(
    subspace: &DeformationSubspace,
    a: &[f64],
    positions: &[Vec3],
    domain: Domain,
) -> Result<Vec<Vec3>> {
    let delta = subspace.offsets(a)?;
    apply_control_offsets(positions, subspace.weights(domain)?, &delta)
}

/// Clamps every coefficient into its range.
pub fn clamp_coefficients(subspace: &DeformationSubspace, a: &[f64]) -> Result<Coefficients> {
    clamp_to_ranges(subspace.ranges(), a)
}

pub(crate) fn clamp_to_ranges(ranges: &[(f64, f64)], a: &[f64]) -> Result<Coefficients> {
    if a.len() != ranges.len() {
        return Err(invalid(format!("expected {} coefficients, got {}", ranges.len(), a.len())));
    }
    Ok(Coefficients(
        a.iter()
            .zip(ranges)
            .map(|(&x, &(lo, hi))| x.max(lo).min(hi))
            .collect(),
    ))
}

/// Independent uniform draws on each `[Lᵢ, Rᵢ]`.
pub fn sample_coefficients(subspace: &DeformationSubspace, seed: u64) -> Coefficients {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_in_ranges(subspace.ranges(), &mut rng)
}

pub(crate) fn sample_in_ranges(ranges: &[(f64, f64)], rng: &mut impl Rng) -> Coefficients {
    Coefficients(
        ranges
            .iter()
            .map(|&(lo, hi)| lo + rng.gen::<f64>() * (hi - lo))
            .collect(),
    )
}
