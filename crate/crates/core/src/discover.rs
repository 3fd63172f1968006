//! Unsupervised discovery of meta-handles from a collection of targets.
//!
//! The source is fitted to every target with free control offsets, the
//! resulting K×3c offset matrix is factorized into m unit-norm meta-handles
//! with disentanglement priors, and coefficient ranges are read off the
//! coefficient columns and shrunk until sampled deformations stay
//! plausible.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::deform::{sample_in_ranges, DeformationSubspace, MetaHandle, DEFAULT_HANDLE_COUNT};
use crate::error::{invalid, Error, Result};
use crate::fit::{fit_full_offsets, FitConfig, LossBreakdown, SourceShape};
use crate::losses::{
    covariance_loss, orthogonality_loss, sparsity_loss, svd_loss, unstack_handle, LossWeights,
};
use crate::mesh::Vec3;

/// Largest fraction of targets whose fit may diverge.
const MAX_DROPPED_FRACTION: f64 = 0.2;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Stop factorizing when an alternating round improves by less than this
/// relative amount.
const RELATIVE_DECREASE: f64 = 1e-6;

/// Gradient steps per block in each alternating round.
const BLOCK_STEPS: usize = 5;

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryConfig {
    /// Number of meta-handles m.
    pub handle_count: usize,
    /// Disentanglement weights for the factorization and geometric weights
    /// for the range check.
    pub weights: LossWeights,
    /// Alternating rounds of the factorization.
    pub iterations: usize,
    /// Lower and upper percentile of each coefficient column.
    pub percentiles: (f64, f64),
    /// Plausibility threshold for the range check. `None` uses twice the
    /// mean geometric loss of the dataset fits.
    pub tau_geo: Option<f64>,
    /// Coefficient vectors drawn per range check.
    pub range_samples: usize,
    pub shrink: f64,
    pub max_shrink_rounds: usize,
    /// Count the variances in the covariance term, not only the
    /// cross-covariances.
    pub cov_include_diagonal: bool,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            handle_count: DEFAULT_HANDLE_COUNT,
            weights: LossWeights::default(),
            iterations: 200,
            percentiles: (5.0, 95.0),
            tau_geo: None,
            range_samples: 32,
            shrink: 0.9,
            max_shrink_rounds: 50,
            cov_include_diagonal: true,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.handle_count == 0 {
            return Err(invalid("handle_count must be at least 1"));
        }
        let (lo, hi) = self.percentiles;
        if !(0.0 <= lo && lo <= hi && hi <= 100.0) {
            return Err(invalid("percentiles must be ordered within [0, 100]"));
        }
        if let Some(tau) = self.tau_geo {
            if !(tau.is_finite() && tau >= 0.0) {
                return Err(invalid("tau_geo must be non-negative"));
            }
        }
        if self.range_samples == 0 {
            return Err(invalid("range_samples must be at least 1"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid("shrink must lie in (0, 1)"));
        }
        self.weights.validate()?;
        self.fit.validate()
    }
}

/// Fitted offsets of the source to every usable target.
#[derive(Debug, Clone)]
pub struct OffsetDataset {
    /// Row k holds the flattened c×3 offsets of the k-th kept target.
    pub x: DMatrix<f64>,
    /// Final fit losses, one per row.
    pub losses: Vec<LossBreakdown>,
    /// Target index of each row.
    pub kept: Vec<usize>,
    /// Targets whose fit diverged.
    pub dropped: Vec<usize>,
}

fn flatten(offsets: &DMatrix<f64>) -> Vec<f64> {
    (0..offsets.nrows())
        .flat_map(|j| (0..3).map(move |k| offsets[(j, k)]))
        .collect()
}

fn unflatten(row: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(row.len() / 3, 3, row)
}

/// Fits free control offsets to each target in parallel. Diverged fits
/// are dropped; more than 20% dropped is an error.
pub fn build_offset_dataset(src: &SourceShape, targets: &[Vec<Vec3>], config: &FitConfig) -> Result<OffsetDataset> {
    if targets.is_empty() {
        return Err(invalid("no targets"));
    }
    let fits: Vec<Result<_>> = targets
        .par_iter()
        .map(|t| fit_full_offsets(src, t, config))
        .collect();
    let width = 3 * src.control_count();
    let mut rows = Vec::new();
    let mut losses = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (k, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(r) => {
                rows.extend(flatten(&r.offsets));
                losses.push(r.breakdown);
                kept.push(k);
            }
            Err(Error::Diverged { .. }) => dropped.push(k),
            Err(e) => return Err(e),
        }
    }
    if dropped.len() as f64 > MAX_DROPPED_FRACTION * targets.len() as f64 {
        return Err(Error::TooManyDropped {
            dropped: dropped.len(),
            total: targets.len(),
        });
    }
    Ok(OffsetDataset {
        x: DMatrix::from_row_slice(kept.len(), width, &rows),
        losses,
        kept,
        dropped,
    })
}

/// Weighted values of the factorization objective.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FactorizationTerms {
    pub total: f64,
    /// `‖X − AB‖²_F / K`.
    pub reconstruction: f64,
    pub sparsity: f64,
    pub covariance: f64,
    pub orthogonality: f64,
    pub svd: f64,
}

/// Coefficients `a` (K×m) and stacked handles `b` (m×3c) with `X ≈ a·b`.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Handle rows seeded randomly because X had too few directions.
    pub random_rows: Vec<usize>,
    /// Objective before the first round and after each round.
    pub trace: Vec<f64>,
    pub terms: FactorizationTerms,
}

/// Flips `v` so its first nonzero entry is positive. Returns whether it
/// flipped.
fn fix_sign(v: &mut [f64]) -> bool {
    match v.iter().find(|x| x.abs() > 1e-12) {
        Some(&x) if x < 0.0 => {
            v.iter_mut().for_each(|x| *x = -*x);
            true
        }
        _ => false,
    }
}

/// Top-m right singular directions of X, sign-fixed, with `A0 = X·B0ᵀ`.
/// Missing directions are filled with seeded random unit rows orthogonal
/// to the others and listed in `random_rows`.
pub fn init_factorization(x: &DMatrix<f64>, m: usize, seed: u64) -> Result<Factorization> {
    let (k, n) = x.shape();
    if m == 0 || m > k || m > n {
        return Err(invalid(format!("handle count {m} must lie in 1..=min(K={k}, 3c={n})")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("offset matrix has non-finite entries"));
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    for &i in order.iter().take(m) {
        if sigma_max > 0.0 && svd.singular_values[i] > RANK_TOLERANCE * sigma_max {
            let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
            // Round-off from the decomposition would otherwise sit on the
            // kinks of the L1 terms.
            row.iter_mut().filter(|v| v.abs() <= 1e-12).for_each(|v| *v = 0.0);
            fix_sign(&mut row);
            rows.push(row);
        }
    }
    let mut random_rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while rows.len() < m {
        let mut row: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for other in &rows {
                let d: f64 = row.iter().zip(other).map(|(p, q)| p * q).sum();
                row.iter_mut().zip(other).for_each(|(p, q)| *p -= d * q);
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        row.iter_mut().for_each(|v| *v /= norm);
        fix_sign(&mut row);
        random_rows.push(rows.len());
        rows.push(row);
    }
    let b = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let mut a = x * b.transpose();
    for &i in &random_rows {
        a.column_mut(i).fill(0.0);
    }
    Ok(Factorization {
        a,
        b,
        random_rows,
        trace: Vec::new(),
        terms: FactorizationTerms::default(),
    })
}

struct Objective<'a> {
    x: &'a DMatrix<f64>,
    weights: &'a LossWeights,
    include_diagonal: bool,
}

impl Objective<'_> {
    fn k(&self) -> f64 {
        self.x.nrows() as f64
    }

    fn uses_covariance(&self) -> bool {
        self.weights.w_cov > 0.0 && self.x.nrows() >= 2
    }

    fn terms(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<FactorizationTerms> {
        let w = self.weights;
        let mut t = FactorizationTerms {
            reconstruction: (self.x - a * b).norm_squared() / self.k(),
            ..Default::default()
        };
        if w.w_sp > 0.0 {
            t.sparsity = w.w_sp * sparsity_loss(b, a)?.value;
        }
        if self.uses_covariance() {
            t.covariance = w.w_cov * covariance_loss(a, self.include_diagonal)?.value;
        }
        if w.w_ortho > 0.0 {
            t.orthogonality = w.w_ortho * orthogonality_loss(b).value;
        }
        if w.w_svd > 0.0 {
            t.svd = w.w_svd * svd_loss(b)?.value;
        }
        t.total = t.reconstruction + t.sparsity + t.covariance + t.orthogonality + t.svd;
        Ok(t)
    }

    /// Gradient in A of everything but the sparsity term.
    fn grad_a(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let w = self.weights;
        let mut g = (a * b - self.x) * b.transpose() * (2.0 / self.k());
        if self.uses_covariance() {
            g += covariance_loss(a, self.include_diagonal)?.grad * w.w_cov;
        }
        Ok(g)
    }

    /// Gradient in B of everything but the sparsity term.
    fn grad_b(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let w = self.weights;
        let mut g = a.transpose() * (a * b - self.x) * (2.0 / self.k());
        if w.w_ortho > 0.0 {
            g += orthogonality_loss(b).grad * w.w_ortho;
        }
        if w.w_svd > 0.0 {
            g += svd_loss(b)?.grad * w.w_svd;
        }
        Ok(g)
    }
}

/// Rows of `b` scaled to unit norm.
fn normalize_rows(mut b: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in b.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    b
}

/// Backtracking along a block direction: trial steps 1, 1/2, 1/4, ...
/// Returns the first candidate that strictly decreases the objective.
fn descend<T, F>(current: f64, mut trial: F) -> Result<Option<(T, f64)>>
where
    F: FnMut(f64) -> Result<(T, f64)>,
{
    let mut step = 1.0;
    for _ in 0..MAX_HALVINGS {
        let (candidate, value) = trial(step)?;
        if value.is_finite() && value < current {
            return Ok(Some((candidate, value)));
        }
        step *= 0.5;
    }
    Ok(None)
}

fn soft_threshold(x: f64, threshold: f64) -> f64 {
    x.signum() * (x.abs() - threshold).max(0.0)
}

/// Curvature of the reconstruction term along each row of the other
/// factor, `2 diag(GᵀG)/K`, lightly damped.
fn diagonal_curvature(g: &DMatrix<f64>, k: f64) -> Vec<f64> {
    let d: Vec<f64> = (0..g.ncols()).map(|i| 2.0 * g.column(i).norm_squared() / k).collect();
    let damping = 1e-12 + 1e-6 * d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|v| v + damping).collect()
}

/// Alternating minimization of `‖X − AB‖²/K` plus the weighted
/// disentanglement terms. Each block takes proximal gradient steps scaled
/// by the reconstruction curvature, with the L1 sparsity term applied by
/// soft thresholding. Handle rows move along the tangent of the unit
/// sphere and are renormalized. Every accepted step strictly decreases
/// the objective, so the trace is non-increasing.
pub fn factorize(x: &DMatrix<f64>, init: Factorization, config: &DiscoveryConfig) -> Result<Factorization> {
    let Factorization {
        mut a,
        mut b,
        random_rows,
        ..
    } = init;
    if a.nrows() != x.nrows() || b.ncols() != x.ncols() || a.ncols() != b.nrows() {
        return Err(invalid("factorization shapes do not match the offset matrix"));
    }
    let objective = Objective {
        x,
        weights: &config.weights,
        include_diagonal: config.cov_include_diagonal,
    };
    let mut terms = objective.terms(&a, &b)?;
    let mut trace = vec![terms.total];
    let diverged = |iteration: usize, value: f64, trace: &[f64]| Error::Diverged {
        iteration,
        value,
        trace: trace.to_vec(),
    };
    if !terms.total.is_finite() {
        return Err(diverged(0, terms.total, &trace));
    }
    let k = x.nrows() as f64;
    for iteration in 1..=config.iterations {
        let before = terms.total;
        let mut value = before;
        // Proximal steps: the smooth terms by a scaled gradient step, the
        // L1 sparsity term by soft thresholding, so exact zeros persist.
        let sp = config.weights.w_sp;
        for _ in 0..BLOCK_STEPS {
            let curvature = diagonal_curvature(&b.transpose(), k);
            let g = objective.grad_a(&a, &b)?;
            match descend(value, |t| {
                let candidate = DMatrix::from_fn(a.nrows(), a.ncols(), |r, i| {
                    let h = t / curvature[i];
                    soft_threshold(a[(r, i)] - h * g[(r, i)], h * sp / k)
                });
                let v = objective.terms(&candidate, &b)?.total;
                Ok((candidate, v))
            })? {
                Some((candidate, v)) => {
                    a = candidate;
                    value = v;
                }
                None => break,
            }
        }
        // B rows move along their tangent and are renormalized.
        let m = b.nrows() as f64;
        for _ in 0..BLOCK_STEPS {
            let curvature = diagonal_curvature(&a, k);
            let mut g = objective.grad_b(&a, &b)?;
            for i in 0..b.nrows() {
                let radial = g.row(i).dot(&b.row(i));
                for j in 0..b.ncols() {
                    g[(i, j)] -= radial * b[(i, j)];
                }
            }
            match descend(value, |t| {
                let candidate = normalize_rows(DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| {
                    let h = t / curvature[i];
                    soft_threshold(b[(i, j)] - h * g[(i, j)], h * sp / m)
                }));
                // A row thresholded to zero has no direction left.
                let v = if candidate.row_iter().any(|r| r.norm() == 0.0) {
                    f64::INFINITY
                } else {
                    objective.terms(&a, &candidate)?.total
                };
                Ok((candidate, v))
            })? {
                Some((candidate, v)) => {
                    b = candidate;
                    value = v;
                }
                None => break,
            }
        }
        terms = objective.terms(&a, &b)?;
        if !terms.total.is_finite() {
            return Err(diverged(iteration, terms.total, &trace));
        }
        trace.push(terms.total);
        if before - terms.total <= RELATIVE_DECREASE * before.abs() {
            break;
        }
    }

    // Sign convention: first nonzero handle entry positive.
    for i in 0..b.nrows() {
        let mut row: Vec<f64> = b.row(i).iter().copied().collect();
        if fix_sign(&mut row) {
            b.row_mut(i).neg_mut();
            a.column_mut(i).neg_mut();
        }
    }
    Ok(Factorization {
        a,
        b,
        random_rows,
        trace,
        terms,
    })
}

/// Linear-interpolation percentile of `values`, `p` in [0, 100].
fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Outcome of the range check.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeReport {
    /// Ranges from the percentiles, before shrinking.
    pub initial: Vec<(f64, f64)>,
    pub tau_geo: f64,
    /// Mean sampled geometric loss before each shrink and after the last.
    pub mean_losses: Vec<f64>,
    pub shrink_rounds: usize,
}

/// Ranges from the percentiles of each coefficient column, widened to
/// contain 0, then shrunk toward 0 while the mean geometric loss of
/// sampled deformations exceeds `tau_geo`. The samples are drawn once and
/// rescaled to each shrunken box.
pub fn estimate_ranges(
    src: &SourceShape,
    factorization: &Factorization,
    tau_geo: f64,
    config: &DiscoveryConfig,
) -> Result<(DeformationSubspace, RangeReport)> {
    let (a, b) = (&factorization.a, &factorization.b);
    if b.ncols() != 3 * src.control_count() || a.ncols() != b.nrows() || a.nrows() == 0 {
        return Err(invalid("factorization does not match the source controls"));
    }
    let handles = (0..b.nrows())
        .map(|i| MetaHandle::normalized(unstack_handle(b, i)))
        .collect::<Result<Vec<_>>>()?;
    let (p_lo, p_hi) = config.percentiles;
    let initial: Vec<(f64, f64)> = a
        .column_iter()
        .map(|col| {
            let values: Vec<f64> = col.iter().copied().collect();
            (percentile(&values, p_lo).min(0.0), percentile(&values, p_hi).max(0.0))
        })
        .collect();
    let mut subspace = DeformationSubspace::new(handles, initial.clone(), src.coords().clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = vec![(0.0, 1.0); b.nrows()];
    let draws: Vec<Vec<f64>> = (0..config.range_samples)
        .map(|_| sample_in_ranges(&unit, &mut rng).0)
        .collect();

    let mean_loss = |ranges: &[(f64, f64)]| -> Result<f64> {
        let losses: Vec<f64> = draws
            .par_iter()
            .map(|u| {
                let coeffs: Vec<f64> = u.iter().zip(ranges).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect();
                let delta = subspace.offsets(&coeffs)?;
                let geo = src.geometric_loss(&delta, &config.weights, config.fit.chamfer_variant)?;
                Ok(if geo.total.is_finite() { geo.total } else { f64::INFINITY })
            })
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    };

    let mut ranges = initial.clone();
    let mut mean_losses = vec![mean_loss(&ranges)?];
    let mut shrink_rounds = 0;
    while *mean_losses.last().expect("non-empty") > tau_geo && shrink_rounds < config.max_shrink_rounds {
        for r in &mut ranges {
            r.0 *= config.shrink;
            r.1 *= config.shrink;
        }
        shrink_rounds += 1;
        mean_losses.push(mean_loss(&ranges)?);
    }
    subspace = subspace.with_ranges(ranges)?;
    Ok((
        subspace,
        RangeReport {
            initial,
            tau_geo,
            mean_losses,
            shrink_rounds,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct DiscoveryReport {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Final fit losses of the kept targets.
    pub fit_losses: Vec<LossBreakdown>,
    /// Factorization objective trace.
    pub trace: Vec<f64>,
    pub terms: FactorizationTerms,
    pub random_rows: Vec<usize>,
    /// Per-target coefficients, rows aligned with `kept`.
    pub coefficients: DMatrix<f64>,
    pub ranges: RangeReport,
}

/// Fits, factorizes and estimates ranges.
pub fn discover_subspace(
    src: &SourceShape,
    targets: &[Vec<Vec3>],
    config: &DiscoveryConfig,
) -> Result<(DeformationSubspace, DiscoveryReport)> {
    config.validate()?;
    if targets.len() < config.handle_count {
        return Err(Error::InsufficientTargets {
            available: targets.len(),
            required: config.handle_count,
        });
    }
    let dataset = build_offset_dataset(src, targets, &config.fit)?;
    let k = dataset.x.nrows();
    if k < config.handle_count {
        return Err(Error::InsufficientTargets {
            available: k,
            required: config.handle_count,
        });
    }
    let tau_geo = match config.tau_geo {
        Some(tau) => tau,
        None => {
            let losses: Vec<f64> = dataset
                .x
                .row_iter()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|row| {
                    let delta = unflatten(&row.iter().copied().collect::<Vec<_>>());
                    src.geometric_loss(&delta, &config.weights, config.fit.chamfer_variant)
                        .map(|g| g.total)
                })
                .collect::<Result<_>>()?;
            2.0 * losses.iter().sum::<f64>() / k as f64
        }
    };
    let init = init_factorization(&dataset.x, config.handle_count, config.seed)?;
    let factorization = factorize(&dataset.x, init, config)?;
    let (subspace, ranges) = estimate_ranges(src, &factorization, tau_geo, config)?;
    Ok((
        subspace,
        DiscoveryReport {
            kept: dataset.kept,
            dropped: dataset.dropped,
            fit_losses: dataset.losses,
            trace: factorization.trace,
            terms: factorization.terms,
            random_rows: factorization.random_rows,
            coefficients: factorization.a,
            ranges,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::stack_handles;
    use crate::shapes;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn no_priors() -> DiscoveryConfig {
        DiscoveryConfig {
            weights: LossWeights {
                w_sp: 0.0,
                w_cov: 0.0,
                w_ortho: 0.0,
                w_svd: 0.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn assert_monotone(trace: &[f64]) {
        for w in trace.windows(2) {
            assert!(w[1] <= w[0], "trace increased: {trace:?}");
        }
    }

    fn assert_unit_rows(b: &DMatrix<f64>) {
        for row in b.row_iter() {
            assert!((row.norm() - 1.0).abs() <= 1e-9);
        }
    }

    /// Best error of a rank-`m` approximation, from the trailing singular
    /// values.
    fn truncation_error(x: &DMatrix<f64>, m: usize) -> f64 {
        let mut s: Vec<f64> = x.clone().svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s[m..].iter().map(|v| v * v).sum()
    }

    /// Cosines of the principal angles between the row spaces of `p` and
    /// `q`, each with orthonormal rows.
    fn principal_cosines(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Vec<f64> {
        let orth = |m: &DMatrix<f64>| m.transpose().qr().q();
        (orth(p).transpose() * orth(q)).singular_values().iter().copied().collect()
    }

    #[test]
    fn init_reconstructs_exact_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 10, 2) * random_matrix(&mut rng, 2, 12);
        let f = init_factorization(&x, 2, 0).unwrap();
        assert!(f.random_rows.is_empty());
        assert_unit_rows(&f.b);
        let rel = (&x - &f.a * &f.b).norm() / x.norm();
        assert!(rel <= 1e-6, "{rel}");
        for row in f.b.row_iter() {
            assert!(row.iter().find(|v| v.abs() > 1e-12).unwrap() > &0.0);
        }
    }

    #[test]
    fn init_of_zero_matrix_is_random_and_flagged() {
        let x = DMatrix::zeros(5, 6);
        let f = init_factorization(&x, 2, 3).unwrap();
        assert_eq!(f.random_rows, vec![0, 1]);
        assert_eq!(f.a, DMatrix::zeros(5, 2));
        assert_unit_rows(&f.b);
        assert!(f.b.row(0).dot(&f.b.row(1)).abs() <= 1e-12);
        let again = init_factorization(&x, 2, 3).unwrap();
        assert_eq!(f.b, again.b);
    }

    #[test]
    fn init_fills_missing_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 6, 1) * random_matrix(&mut rng, 1, 9);
        let f = init_factorization(&x, 3, 0).unwrap();
        assert_eq!(f.random_rows, vec![1, 2]);
        let gram = &f.b * f.b.transpose();
        assert!((gram - DMatrix::identity(3, 3)).amax() <= 1e-12);
    }

    #[test]
    fn init_rank_one_is_sign_fixed() {
        let v = [-0.5, 2.0, 0.0, 1.0, -1.0, 3.0];
        let x = DMatrix::from_fn(4, 6, |_, j| v[j]);
        let f = init_factorization(&x, 1, 0).unwrap();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for j in 0..6 {
            assert!((f.b[(0, j)] + v[j] / norm).abs() <= 1e-12);
        }
    }

    #[test]
    fn init_rejects_too_many_handles() {
        let x = DMatrix::zeros(2, 6);
        assert!(init_factorization(&x, 3, 0).is_err());
        assert!(init_factorization(&x, 0, 0).is_err());
        assert!(init_factorization(&DMatrix::from_element(2, 3, f64::NAN), 1, 0).is_err());
    }

    /// Two unit handles over 10 controls with disjoint supports: the first
    /// moves controls 0..5 along z, the second moves controls 5..10 along x
    /// with varying magnitude.
    fn planted_rows() -> DMatrix<f64> {
        let h1 = DMatrix::from_fn(10, 3, |j, k| if j < 5 && k == 2 { 1.0 } else { 0.0 });
        let h2 = DMatrix::from_fn(10, 3, |j, k| if j >= 5 && k == 0 { (j - 4) as f64 } else { 0.0 });
        let b = stack_handles(&[h1, h2]).unwrap();
        normalize_rows(b)
    }

    fn planted_data(k: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(k, 2, |_, _| rng.gen_range(-0.3..0.3));
        let b = planted_rows();
        (&a * &b, b)
    }

    #[test]
    fn factorize_recovers_planted_handles() {
        let (x, truth) = planted_data(40, 4);
        let config = DiscoveryConfig {
            handle_count: 2,
            ..Default::default()
        };
        let init = init_factorization(&x, 2, 0).unwrap();
        let f = factorize(&x, init, &config).unwrap();
        assert_monotone(&f.trace);
        assert_unit_rows(&f.b);
        let cos = |i: usize, g: usize| f.b.row(i).dot(&truth.row(g)).abs();
        let best = (cos(0, 0).min(cos(1, 1))).max(cos(0, 1).min(cos(1, 0)));
        assert!(best >= 0.9, "cosines {} {} {} {}", cos(0, 0), cos(0, 1), cos(1, 0), cos(1, 1));
    }

    #[test]
    fn factorize_without_priors_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let low = random_matrix(&mut rng, 12, 3) * random_matrix(&mut rng, 3, 9);
        let full = random_matrix(&mut rng, 12, 9);
        let config = no_priors();
        for (x, m) in [(&low, 3), (&full, 2), (&full, 4)] {
            let init = init_factorization(x, m, 0).unwrap();
            let f = factorize(x, init, &config).unwrap();
            let err = (x - &f.a * &f.b).norm_squared();
            assert!(err <= truncation_error(x, m) + 1e-4, "m={m}: {err}");
            assert_monotone(&f.trace);
        }
    }

    #[test]
    fn factorize_zero_matrix_stays_finite() {
        let x = DMatrix::zeros(6, 9);
        let init = init_factorization(&x, 2, 0).unwrap();
        let config = DiscoveryConfig {
            handle_count: 2,
            ..Default::default()
        };
        let f = factorize(&x, init, &config).unwrap();
        assert_eq!(f.a, DMatrix::zeros(6, 2));
        assert_eq!(f.terms.reconstruction, 0.0);
        assert!(f.terms.total.is_finite());
        assert_unit_rows(&f.b);
    }

    #[test]
    fn row_permutation_keeps_the_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(&mut rng, 8, 2) * random_matrix(&mut rng, 2, 9);
        let perm = DMatrix::from_fn(8, 9, |i, j| x[((i + 3) % 8, j)]);
        let config = no_priors();
        let run = |x: &DMatrix<f64>| factorize(x, init_factorization(x, 2, 0).unwrap(), &config).unwrap().b;
        for cos in principal_cosines(&run(&x), &run(&perm)) {
            assert!(cos.min(1.0).acos() <= 1e-6, "{cos}");
        }
    }

    #[test]
    fn percentiles_interpolate_linearly() {
        let values: Vec<f64> = (0..100).map(|i| -1.0 + 2.0 * i as f64 / 99.0).collect();
        assert!((percentile(&values, 5.0) + 0.9).abs() <= 1e-12);
        assert!((percentile(&values, 95.0) - 0.9).abs() <= 1e-12);
        assert_eq!(percentile(&[3.0], 50.0), 3.0);
    }

    fn small_source() -> SourceShape {
        SourceShape::build(shapes::icosphere(1), 6, 300, 1).unwrap()
    }

    fn factorization_with_columns(src: &SourceShape, columns: &[Vec<f64>]) -> Factorization {
        let c = src.control_count();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = normalize_rows(random_matrix(&mut rng, columns.len(), 3 * c));
        let a = DMatrix::from_fn(columns[0].len(), columns.len(), |k, i| columns[i][k]);
        Factorization {
            a,
            b,
            random_rows: Vec::new(),
            trace: Vec::new(),
            terms: FactorizationTerms::default(),
        }
    }

    #[test]
    fn ranges_from_percentiles() {
        let src = small_source();
        let spaced: Vec<f64> = (0..100).map(|i| 0.1 * (-1.0 + 2.0 * i as f64 / 99.0)).collect();
        let positive: Vec<f64> = (0..100).map(|i| 0.01 + 0.001 * i as f64).collect();
        let f = factorization_with_columns(&src, &[vec![0.0; 100], spaced, positive]);
        let config = DiscoveryConfig::default();
        let (sub, report) = estimate_ranges(&src, &f, f64::INFINITY, &config).unwrap();
        let r = sub.ranges();
        assert_eq!(r[0], (0.0, 0.0));
        assert!((r[1].0 + 0.09).abs() <= 1e-12 && (r[1].1 - 0.09).abs() <= 1e-12);
        assert_eq!(r[2].0, 0.0);
        assert_eq!(report.shrink_rounds, 0);
        assert_eq!(report.initial, r.to_vec());
        for h in sub.handles() {
            assert!((h.offsets().norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn zero_threshold_shrinks_every_round() {
        let src = small_source();
        let spaced: Vec<f64> = (0..20).map(|i| -0.2 + 0.02 * i as f64).collect();
        let f = factorization_with_columns(&src, &[spaced]);
        let config = DiscoveryConfig::default();
        let (sub, report) = estimate_ranges(&src, &f, 0.0, &config).unwrap();
        assert_eq!(report.shrink_rounds, config.max_shrink_rounds);
        assert_eq!(report.mean_losses.len(), config.max_shrink_rounds + 1);
        let factor = config.shrink.powi(config.max_shrink_rounds as i32);
        let (lo, hi) = sub.ranges()[0];
        assert!((lo - report.initial[0].0 * factor).abs() <= 1e-15);
        assert!((hi - report.initial[0].1 * factor).abs() <= 1e-15);
        assert!(lo <= 0.0 && 0.0 <= hi && hi - lo <= 1e-2);
    }

    #[test]
    fn shrinking_stops_below_threshold() {
        let src = small_source();
        let spaced: Vec<f64> = (0..20).map(|i| -0.2 + 0.02 * i as f64).collect();
        let f = factorization_with_columns(&src, &[spaced]);
        let config = DiscoveryConfig::default();
        let (_, free) = estimate_ranges(&src, &f, f64::INFINITY, &config).unwrap();
        let tau = 0.5 * free.mean_losses[0];
        let (_, report) = estimate_ranges(&src, &f, tau, &config).unwrap();
        assert!(report.shrink_rounds >= 1);
        assert!(*report.mean_losses.last().unwrap() <= tau);
        assert!(report.mean_losses[report.mean_losses.len() - 2] > tau);
    }

    #[test]
    fn config_validation() {
        assert!(DiscoveryConfig::default().validate().is_ok());
        let bad = [
            DiscoveryConfig { handle_count: 0, ..Default::default() },
            DiscoveryConfig { percentiles: (95.0, 5.0), ..Default::default() },
            DiscoveryConfig { tau_geo: Some(-1.0), ..Default::default() },
            DiscoveryConfig { shrink: 1.0, ..Default::default() },
            DiscoveryConfig { range_samples: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
