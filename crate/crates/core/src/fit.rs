//! Fitting a source shape to a target point cloud by direct optimization
//! over control offsets, either all 3c of them or the m coefficients of a
//! deformation subspace.
//!
//! Each outer iteration refreshes the nearest-neighbour assignments and
//! records the exact objective. The inner steps then decrease the
//! objective with those assignments frozen, which upper-bounds the true
//! Chamfer term, so the recorded trace never increases. Steps are
//! preconditioned by the Gauss-Newton Hessian of the Chamfer term and
//! halved until the frozen objective decreases.

use nalgebra::{Cholesky, DMatrix};

use crate::deform::{apply_control_offsets, Coefficients, DeformationSubspace};
use crate::error::{invalid, Error, Result};
use crate::handles::{
    compute_biharmonic_coordinates, default_seed_vertex, geodesic_fps, interpolate_coordinates,
    DeformCoordinates,
};
use crate::losses::{
    chamfer_fixed, reflect_x, ChamferVariant, Correspondences, GeometricLoss, GeometricReference, LossWeights,
};
use crate::mesh::{cotangent_laplacian, sample_surface, EdgeGraph, PointCloud, TriMesh, Vec3};
use crate::spatial::KdTree;

/// Default number of points sampled on the source surface.
pub const DEFAULT_POINT_COUNT: usize = 4096;

/// Smallest Laplacian residual, relative to the mean entry size, used when
/// weighting the quadratic bound of the L1 term.
const LAPLACIAN_RESIDUAL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_outer_iterations: usize,
    /// Descent steps between correspondence refreshes.
    pub inner_steps: usize,
    /// First trial step along the preconditioned direction.
    pub initial_step: f64,
    pub max_halvings: usize,
    /// Stop when the relative decrease between refreshes falls below this.
    pub tolerance: f64,
    pub weights: LossWeights,
    pub chamfer_variant: ChamferVariant,
    /// Carried for reproducible pipelines; the optimizer itself draws no
    /// random numbers.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 60,
            inner_steps: 5,
            initial_step: 1.0,
            max_halvings: 20,
            tolerance: 1e-5,
            weights: LossWeights::default(),
            chamfer_variant: ChamferVariant::Squared,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 {
            return Err(invalid("max_outer_iterations must be at least 1"));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return Err(invalid("initial_step must be positive"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        self.weights.validate()
    }
}

/// Final objective split into its terms, all unweighted except `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub chamfer: f64,
    pub geometric: f64,
    pub symmetry: f64,
    pub normal: f64,
    pub laplacian: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// c×3 control offsets. For subspace fits this is `Σ aᵢ Mᵢ`.
    pub offsets: DMatrix<f64>,
    /// Set for subspace fits.
    pub coefficients: Option<Coefficients>,
    /// Exact objective after each correspondence refresh.
    pub trace: Vec<f64>,
    pub breakdown: LossBreakdown,
    pub deformed_points: Vec<Vec3>,
    pub deformed_vertices: Vec<Vec3>,
    /// Deformed faces whose area collapsed, if the normal term was active.
    pub degenerate_faces: Vec<usize>,
    pub converged: bool,
}

/// A source mesh with its coordinates interpolated to a sampled cloud.
#[derive(Debug, Clone)]
pub struct SourceShape {
    mesh: TriMesh,
    cloud: PointCloud,
    coords: DeformCoordinates,
    reference: GeometricReference,
}

impl SourceShape {
    /// `coords` must carry point weights for `cloud`.
    pub fn new(mesh: TriMesh, cloud: PointCloud, coords: DeformCoordinates) -> Result<Self> {
        if coords.vertex_weights().nrows() != mesh.vertex_count() {
            return Err(invalid("coordinates do not match the mesh"));
        }
        match coords.point_weights() {
            Some(p) if p.nrows() == cloud.len() => {}
            _ => return Err(invalid("coordinates are not interpolated to this cloud")),
        }
        let reference = GeometricReference::new(&mesh)?;
        Ok(Self {
            mesh,
            cloud,
            coords,
            reference,
        })
    }

    /// Picks `control_count` controls by farthest-point sampling, solves
    /// for biharmonic coordinates, and samples `point_count` points.
    pub fn build(mesh: TriMesh, control_count: usize, point_count: usize, seed: u64) -> Result<Self> {
        let graph = EdgeGraph::from_mesh(&mesh);
        let controls = geodesic_fps(&mesh, &graph, control_count, default_seed_vertex(&mesh))?;
        let lap = cotangent_laplacian(&mesh)?;
        let coords = compute_biharmonic_coordinates(&mesh, &lap, &controls)?;
        let cloud = sample_surface(&mesh, point_count, seed)?;
        let coords = interpolate_coordinates(&coords, &mesh, &cloud)?;
        Self::new(mesh, cloud, coords)
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn points(&self) -> &[Vec3] {
        &self.cloud.points
    }

    pub fn coords(&self) -> &DeformCoordinates {
        &self.coords
    }

    pub fn reference(&self) -> &GeometricReference {
        &self.reference
    }

    pub fn control_count(&self) -> usize {
        self.coords.control_count()
    }

    fn point_weights(&self) -> &DMatrix<f64> {
        self.coords.point_weights().expect("checked in new")
    }

    /// Deformed vertices and points for control offsets `delta`.
    pub fn deform(&self, delta: &DMatrix<f64>) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
        Ok((
            apply_control_offsets(self.mesh.vertices(), self.coords.vertex_weights(), delta)?,
            apply_control_offsets(&self.cloud.points, self.point_weights(), delta)?,
        ))
    }

    /// Geometric loss of the deformation by `delta`.
    pub fn geometric_loss(
        &self,
        delta: &DMatrix<f64>,
        weights: &LossWeights,
        variant: ChamferVariant,
    ) -> Result<GeometricLoss> {
        let (verts, points) = self.deform(delta)?;
        self.reference.evaluate(&verts, &points, weights, variant)
    }
}

/// Linear parameterization of the control offsets.
enum Params<'a> {
    Full { c: usize },
    Subspace { subspace: &'a DeformationSubspace },
}

impl Params<'_> {
    fn dim(&self) -> usize {
        match self {
            Params::Full { c } => 3 * c,
            Params::Subspace { subspace } => subspace.len(),
        }
    }

    fn delta(&self, theta: &[f64]) -> DMatrix<f64> {
        match self {
            Params::Full { c } => DMatrix::from_row_slice(*c, 3, theta),
            Params::Subspace { subspace } => subspace.offsets(theta).expect("dimension checked"),
        }
    }

    fn pull_back(&self, grad_delta: &DMatrix<f64>) -> Vec<f64> {
        match self {
            Params::Full { c } => (0..*c)
                .flat_map(|j| (0..3).map(move |k| (j, k)))
                .map(|(j, k)| grad_delta[(j, k)])
                .collect(),
            Params::Subspace { subspace } => subspace
                .handles()
                .iter()
                .map(|h| h.offsets().dot(grad_delta))
                .collect(),
        }
    }

    fn project(&self, theta: &mut [f64]) {
        if let Params::Subspace { subspace } = self {
            for (x, &(lo, hi)) in theta.iter_mut().zip(subspace.ranges()) {
                *x = x.max(lo).min(hi);
            }
        }
    }

    /// Coordinates at a bound whose gradient points outward.
    fn active(&self, theta: &[f64], grad: &[f64]) -> Vec<bool> {
        match self {
            Params::Full { .. } => vec![false; theta.len()],
            Params::Subspace { subspace } => theta
                .iter()
                .zip(grad)
                .zip(subspace.ranges())
                .map(|((&x, &g), &(lo, hi))| (x <= lo && g > 0.0) || (x >= hi && g < 0.0) || lo == hi)
                .collect(),
        }
    }

    /// Preconditioned descent direction `-H⁻¹ g` over the free
    /// coordinates, with `h` the 3c×3c curvature in flattened offsets.
    fn direction(&self, h: &DMatrix<f64>, grad: &[f64], active: &[bool]) -> Vec<f64> {
        match self {
            Params::Full { .. } => {
                let g = DMatrix::from_column_slice(grad.len(), 1, grad);
                solve_spd(h, &g).iter().map(|d| -d).collect()
            }
            Params::Subspace { subspace } => {
                let free: Vec<usize> = (0..grad.len()).filter(|&i| !active[i]).collect();
                let mut dir = vec![0.0; grad.len()];
                if free.is_empty() {
                    return dir;
                }
                let handles = subspace.handles();
                let basis = DMatrix::from_fn(free.len(), h.nrows(), |r, idx| {
                    handles[free[r]].offsets()[(idx / 3, idx % 3)]
                });
                let reduced = &basis * h * basis.transpose();
                let g = DMatrix::from_fn(free.len(), 1, |r, _| grad[free[r]]);
                let d = solve_spd(&reduced, &g);
                for (r, &i) in free.iter().enumerate() {
                    dir[i] = -d[(r, 0)];
                }
                dir
            }
        }
    }
}

/// Solves `(H + μI) X = B` for symmetric positive semidefinite `H`,
/// increasing the damping until the factorization succeeds.
fn solve_spd(h: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    let scale = (h.trace() / n as f64).abs().max(1e-12);
    let mut mu = scale * 1e-9;
    loop {
        let damped = h + DMatrix::identity(n, n) * mu;
        if let Some(chol) = Cholesky::new(damped) {
            return chol.solve(b);
        }
        mu *= 10.0;
    }
}

struct Evaluation {
    value: f64,
    chamfer: f64,
    geo: GeometricLoss,
    grad: Vec<f64>,
    points: Vec<Vec3>,
    vertices: Vec<Vec3>,
}

struct Problem<'a> {
    src: &'a SourceShape,
    target: &'a [Vec3],
    tree: KdTree<'a>,
    params: Params<'a>,
    config: &'a FitConfig,
}

impl Problem<'_> {
    /// Objective under `corr`, or `None` if the deformation collapses a face.
    fn evaluate(&self, theta: &[f64], corr: &Correspondences) -> Result<Option<Evaluation>> {
        let delta = self.params.delta(theta);
        let (vertices, points) = self.src.deform(&delta)?;
        let w = &self.config.weights;
        let geo = match self.src.reference.evaluate(&vertices, &points, w, self.config.chamfer_variant) {
            Ok(g) => g,
            Err(Error::DegenerateGeometry(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let ch = chamfer_fixed(&points, self.target, corr, self.config.chamfer_variant);
        let value = w.w_fit * ch.value + geo.total;

        let gp = DMatrix::from_fn(points.len(), 3, |i, k| w.w_fit * ch.grad_a[i][k] + geo.grad_points[i][k]);
        let mut grad_delta = self.src.point_weights().tr_mul(&gp);
        if w.w_nor > 0.0 || w.w_lap > 0.0 {
            let gv = DMatrix::from_fn(vertices.len(), 3, |i, k| geo.grad_vertices[i][k]);
            grad_delta += self.src.coords.vertex_weights().tr_mul(&gv);
        }
        Ok(Some(Evaluation {
            value,
            chamfer: ch.value,
            geo,
            grad: self.params.pull_back(&grad_delta),
            points,
            vertices,
        }))
    }

    fn correspondences(&self, points: &[Vec3]) -> Correspondences {
        Correspondences::with_tree(points, self.target, &self.tree)
    }

    /// Curvature model in flattened offsets (index `3j + k`): Gauss-Newton
    /// for the frozen Chamfer and the symmetry term, and a reweighted
    /// quadratic bound for the L1 Laplacian term.
    fn hessian(&self, corr: &Correspondences, eval: &Evaluation) -> DMatrix<f64> {
        let w = &self.config.weights;
        let wp = self.src.point_weights();
        let c = wp.ncols();
        let mut axis_blocks = [DMatrix::zeros(c, c), DMatrix::zeros(c, c), DMatrix::zeros(c, c)];

        if w.w_fit > 0.0 {
            let p = wp.nrows() as f64;
            let q = self.target.len() as f64;
            // Each point appears once for itself and once per target matching it.
            let mut mult = vec![1.0 / p; wp.nrows()];
            for &a in &corr.b_to_a {
                mult[a] += 1.0 / q;
            }
            let scaled = DMatrix::from_fn(wp.nrows(), c, |i, j| wp[(i, j)] * mult[i]);
            let h = wp.tr_mul(&scaled) * (2.0 * w.w_fit);
            for block in &mut axis_blocks {
                *block += &h;
            }
        }

        if w.w_symm > 0.0 {
            let mirrored: Vec<Vec3> = eval.points.iter().map(reflect_x).collect();
            if let Ok(sym) = Correspondences::compute(&eval.points, &mirrored) {
                let p = eval.points.len();
                let s = (2.0 * w.w_symm / p as f64).sqrt();
                let pairs = sym.a_to_b.iter().enumerate().chain(sym.b_to_a.iter().enumerate());
                let mut plus = DMatrix::zeros(2 * p, c);
                let mut minus = DMatrix::zeros(2 * p, c);
                for (r, (i, &k)) in pairs.enumerate() {
                    for j in 0..c {
                        plus[(r, j)] = s * (wp[(i, j)] + wp[(k, j)]);
                        minus[(r, j)] = s * (wp[(i, j)] - wp[(k, j)]);
                    }
                }
                // Reflection flips x, so x residuals add the two weights.
                axis_blocks[0] += plus.tr_mul(&plus);
                let hm = minus.tr_mul(&minus);
                axis_blocks[1] += &hm;
                axis_blocks[2] += &hm;
            }
        }

        let mut h = DMatrix::zeros(3 * c, 3 * c);
        for (k, block) in axis_blocks.iter().enumerate() {
            for i in 0..c {
                for j in 0..c {
                    h[(3 * i + k, 3 * j + k)] = block[(i, j)];
                }
            }
        }
        if w.w_lap > 0.0 {
            if let Some(lap) = self.laplacian_curvature(&eval.vertices) {
                h += lap;
            }
        }
        h
    }

    /// `Jᵀ D J` where `J` maps offsets to Laplacian entries and `D` holds
    /// the weights of the quadratic upper bound `|r'| ≤ (r'² + r²) / 2|r|`,
    /// with `|r|` floored to keep the bound finite at zero residual.
    fn laplacian_curvature(&self, vertices: &[Vec3]) -> Option<DMatrix<f64>> {
        let reference = &self.src.reference;
        let lin = reference.laplacian_linearization(vertices).ok()?;
        let wv = self.src.coords.vertex_weights();
        let c = wv.ncols();
        let floor = LAPLACIAN_RESIDUAL_FLOOR * reference.laplacian_entry_scale();
        let scale = self.config.weights.w_lap / lin.entry_count as f64;

        let ne = lin.edges.len();
        let mut edge_j = DMatrix::zeros(ne, 3 * c);
        for (e, row) in lin.edge_rows.iter().enumerate() {
            for (v, g) in row {
                for j in 0..c {
                    let wvj = wv[(*v, j)];
                    for k in 0..3 {
                        edge_j[(e, 3 * j + k)] += g[k] * wvj;
                    }
                }
            }
        }
        let n = lin.active.len();
        let mut diag_j = DMatrix::zeros(n, 3 * c);
        for (e, &(i, j)) in lin.edges.iter().enumerate() {
            for col in 0..3 * c {
                let x = edge_j[(e, col)];
                diag_j[(i, col)] -= x;
                diag_j[(j, col)] -= x;
            }
        }
        for e in 0..ne {
            let s = (2.0 * scale / lin.edge_residual[e].abs().max(floor)).sqrt();
            edge_j.row_mut(e).scale_mut(s);
        }
        for v in 0..n {
            let s = if lin.active[v] {
                (scale / lin.diag_residual[v].abs().max(floor)).sqrt()
            } else {
                0.0
            };
            diag_j.row_mut(v).scale_mut(s);
        }
        Some(edge_j.tr_mul(&edge_j) + diag_j.tr_mul(&diag_j))
    }

    fn run(&self, theta0: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>, Evaluation, bool)> {
        let cfg = self.config;
        let mut theta = theta0;
        let mut trace: Vec<f64> = Vec::new();
        let mut converged = false;
        let (_, start_points) = self.src.deform(&self.params.delta(&theta))?;
        let mut corr = self.correspondences(&start_points);
        let mut current = self
            .evaluate(&theta, &corr)?
            .ok_or_else(|| Error::DegenerateGeometry("source mesh has a collapsed face".into()))?;

        for outer in 0..cfg.max_outer_iterations {
            check_finite(current.value, outer, &trace)?;
            if let Some(&prev) = trace.last() {
                if prev - current.value <= cfg.tolerance * prev.abs().max(f64::MIN_POSITIVE) {
                    trace.push(current.value);
                    converged = true;
                    break;
                }
            }
            trace.push(current.value);

            let mut moved = false;
            for _ in 0..cfg.inner_steps {
                let h = self.hessian(&corr, &current);
                let active = self.params.active(&theta, &current.grad);
                let dir = self.params.direction(&h, &current.grad, &active);
                let mut step = cfg.initial_step;
                let mut accepted = None;
                for _ in 0..=cfg.max_halvings {
                    let mut trial: Vec<f64> = theta.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
                    self.params.project(&mut trial);
                    if trial != theta {
                        if let Some(e) = self.evaluate(&trial, &corr)? {
                            if e.value < current.value {
                                accepted = Some((trial, e));
                                break;
                            }
                        }
                    }
                    step *= 0.5;
                }
                match accepted {
                    Some((t, e)) => {
                        theta = t;
                        current = e;
                        moved = true;
                    }
                    None => break,
                }
            }

            corr = self.correspondences(&current.points);
            current = self
                .evaluate(&theta, &corr)?
                .expect("accepted iterate was evaluated without collapse");
            if !moved {
                check_finite(current.value, outer, &trace)?;
                trace.push(current.value);
                converged = true;
                break;
            }
        }
        if !converged {
            check_finite(current.value, cfg.max_outer_iterations, &trace)?;
            if trace.last() != Some(&current.value) {
                trace.push(current.value);
            }
        }
        Ok((theta, trace, current, converged))
    }
}

fn check_finite(value: f64, iteration: usize, trace: &[f64]) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration,
            value,
            trace: trace.to_vec(),
        })
    }
}

fn finish(
    theta: &[f64],
    params: &Params<'_>,
    trace: Vec<f64>,
    eval: Evaluation,
    converged: bool,
) -> FitResult {
    let offsets = params.delta(theta);
    let coefficients = match params {
        Params::Subspace { .. } => Some(Coefficients(theta.to_vec())),
        Params::Full { .. } => None,
    };
    FitResult {
        offsets,
        coefficients,
        trace,
        breakdown: LossBreakdown {
            total: eval.value,
            chamfer: eval.chamfer,
            geometric: eval.geo.total,
            symmetry: eval.geo.symmetry,
            normal: eval.geo.normal,
            laplacian: eval.geo.laplacian,
        },
        deformed_points: eval.points,
        deformed_vertices: eval.vertices,
        degenerate_faces: eval.geo.degenerate_faces,
        converged,
    }
}

fn check_target(target: &[Vec3]) -> Result<()> {
    if target.is_empty() {
        return Err(invalid("target point cloud is empty"));
    }
    if target.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(invalid("target point cloud has non-finite coordinates"));
    }
    Ok(())
}

/// Fits all c×3 control offsets, starting from zero.
pub fn fit_full_offsets(src: &SourceShape, target: &[Vec3], config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    check_target(target)?;
    let params = Params::Full {
        c: src.control_count(),
    };
    let problem = Problem {
        src,
        target,
        tree: KdTree::new(target),
        params,
        config,
    };
    let (theta, trace, eval, converged) = problem.run(vec![0.0; problem.params.dim()])?;
    Ok(finish(&theta, &problem.params, trace, eval, converged))
}

/// Fits subspace coefficients within their ranges, starting from zero.
pub fn fit_subspace_coefficients(
    src: &SourceShape,
    target: &[Vec3],
    subspace: &DeformationSubspace,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    check_target(target)?;
    if subspace.coords().controls().indices() != src.coords().controls().indices() {
        return Err(invalid("subspace was built for different control points"));
    }
    if subspace.is_empty() {
        return Err(invalid("subspace has no meta-handles"));
    }
    let problem = Problem {
        src,
        target,
        tree: KdTree::new(target),
        params: Params::Subspace { subspace },
        config,
    };
    let (theta, trace, eval, converged) = problem.run(vec![0.0; problem.params.dim()])?;
    Ok(finish(&theta, &problem.params, trace, eval, converged))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::{apply_subspace, Domain, MetaHandle};
    use crate::losses::chamfer;
    use crate::shapes;

    fn source(mesh: TriMesh, c: usize, p: usize) -> SourceShape {
        SourceShape::build(mesh, c, p, 1).unwrap()
    }

    fn no_symmetry() -> FitConfig {
        FitConfig {
            weights: LossWeights {
                w_symm: 0.0,
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

    #[test]
    fn identity_target() {
        let src = source(shapes::icosphere(2), 12, 1000);
        let r = fit_full_offsets(&src, src.points(), &no_symmetry()).unwrap();
        assert!(r.breakdown.chamfer <= 1e-6);
        assert!(r.offsets.norm() <= 1e-3, "{}", r.offsets.norm());
        assert_monotone(&r.trace);
    }

    #[test]
    fn translation_is_recovered() {
        let src = source(shapes::icosphere(2), 12, 1000);
        let t = Vec3::new(0.1, 0.0, 0.0);
        let target: Vec<Vec3> = src.points().iter().map(|p| p + t).collect();
        let r = fit_full_offsets(&src, &target, &no_symmetry()).unwrap();
        assert!(r.breakdown.chamfer <= 1e-6, "chamfer {}", r.breakdown.chamfer);
        for row in r.offsets.row_iter() {
            let err = (Vec3::new(row[0], row[1], row[2]) - t).norm();
            assert!(err <= 1e-3, "row error {err}");
        }
        assert_monotone(&r.trace);
    }

    fn fit_only() -> FitConfig {
        FitConfig {
            weights: LossWeights::fit_only(),
            ..Default::default()
        }
    }

    #[test]
    fn stretch_reduces_chamfer() {
        let src = source(shapes::icosphere(2), 12, 1000);
        let target: Vec<Vec3> = src.points().iter().map(|p| Vec3::new(1.3 * p.x, p.y, p.z)).collect();
        let initial = chamfer(src.points(), &target).unwrap().value;
        let r = fit_full_offsets(&src, &target, &fit_only()).unwrap();
        assert!(r.breakdown.chamfer <= 0.5 * initial, "{} vs {initial}", r.breakdown.chamfer);
        assert_monotone(&r.trace);

        // The geometric terms trade some of the fit for plausibility.
        let r = fit_full_offsets(&src, &target, &FitConfig::default()).unwrap();
        assert!(r.breakdown.chamfer < initial);
        assert!(r.breakdown.total < r.trace[0]);
        assert_monotone(&r.trace);
    }

    fn two_handle_subspace(src: &SourceShape, range: f64) -> DeformationSubspace {
        let c = src.control_count();
        let rest = src.coords().controls().rest_positions();
        let h1 = DMatrix::from_fn(c, 3, |j, k| if k == 0 { rest[j].x } else { 0.0 });
        let h2 = DMatrix::from_fn(c, 3, |j, k| if k == 1 && rest[j].y > 0.0 { 1.0 } else { 0.0 });
        DeformationSubspace::new(
            vec![MetaHandle::normalized(h1).unwrap(), MetaHandle::normalized(h2).unwrap()],
            vec![(-range, range); 2],
            src.coords().clone(),
        )
        .unwrap()
    }

    #[test]
    fn planted_coefficients_are_recovered() {
        let src = source(shapes::icosphere(2), 12, 1500);
        let sub = two_handle_subspace(&src, 1.0);
        let planted = [0.4, -0.3];
        let target = apply_subspace(&sub, &planted, src.points(), Domain::Points).unwrap();
        let r = fit_subspace_coefficients(&src, &target, &sub, &fit_only()).unwrap();
        let a = r.coefficients.unwrap();
        for (x, y) in a.iter().zip(&planted) {
            assert!((x - y).abs() <= 1e-2, "{a:?} vs {planted:?}");
        }
        assert_monotone(&r.trace);
    }

    #[test]
    fn coefficient_hits_its_bound() {
        let src = source(shapes::icosphere(2), 12, 1500);
        let sub = two_handle_subspace(&src, 0.3);
        let target = apply_subspace(&sub, &[0.6, 0.0], src.points(), Domain::Points).unwrap();
        let r = fit_subspace_coefficients(&src, &target, &sub, &fit_only()).unwrap();
        let a = r.coefficients.unwrap();
        assert_eq!(a[0], 0.3);
        assert!(a.iter().zip(sub.ranges()).all(|(x, &(lo, hi))| lo <= *x && *x <= hi));
    }

    #[test]
    fn zero_ranges_give_identity() {
        let src = source(shapes::icosphere(1), 8, 500);
        let sub = two_handle_subspace(&src, 0.0);
        let target: Vec<Vec3> = src.points().iter().map(|p| p * 1.2).collect();
        let r = fit_subspace_coefficients(&src, &target, &sub, &FitConfig::default()).unwrap();
        assert_eq!(r.coefficients.unwrap().0, vec![0.0, 0.0]);
        assert_eq!(r.deformed_vertices, src.mesh().vertices());
    }

    #[test]
    fn deterministic() {
        let src = source(shapes::cube(2), 8, 600);
        let target: Vec<Vec3> = src.points().iter().map(|p| Vec3::new(p.x, 0.8 * p.y, p.z + 0.1 * p.x)).collect();
        let a = fit_full_offsets(&src, &target, &FitConfig::default()).unwrap();
        let b = fit_full_offsets(&src, &target, &FitConfig::default()).unwrap();
        assert_eq!(a.offsets, b.offsets);
        assert_eq!(a.trace, b.trace);
        assert_monotone(&a.trace);
    }

    #[test]
    fn fixed_point_matches_least_squares() {
        // With one refresh and no geometric terms the descent minimizes a
        // fixed quadratic; compare with the normal equations built here.
        let src = source(shapes::icosphere(1), 6, 300);
        let target: Vec<Vec3> = src.points().iter().map(|p| Vec3::new(1.2 * p.x, p.y - 0.05, 0.9 * p.z)).collect();
        let cfg = FitConfig {
            max_outer_iterations: 1,
            inner_steps: 200,
            weights: LossWeights::fit_only(),
            ..Default::default()
        };
        let r = fit_full_offsets(&src, &target, &cfg).unwrap();

        let corr = Correspondences::compute(src.points(), &target).unwrap();
        let w = src.coords().point_weights().unwrap();
        let (p, q, c) = (w.nrows(), target.len(), w.ncols());
        let rows = p + q;
        let mut design = DMatrix::zeros(rows, c);
        let mut rhs = DMatrix::zeros(rows, 3);
        for i in 0..p {
            let s = (1.0 / p as f64).sqrt();
            let goal = target[corr.a_to_b[i]] - src.points()[i];
            for j in 0..c {
                design[(i, j)] = s * w[(i, j)];
            }
            for k in 0..3 {
                rhs[(i, k)] = s * goal[k];
            }
        }
        for b in 0..q {
            let s = (1.0 / q as f64).sqrt();
            let a = corr.b_to_a[b];
            let goal = target[b] - src.points()[a];
            for j in 0..c {
                design[(p + b, j)] = s * w[(a, j)];
            }
            for k in 0..3 {
                rhs[(p + b, k)] = s * goal[k];
            }
        }
        let exact = design.svd(true, true).solve(&rhs, 1e-14).unwrap();
        assert!((&r.offsets - &exact).amax() <= 1e-4, "{}", (&r.offsets - &exact).amax());
    }

    #[test]
    fn rejects_bad_input() {
        let src = source(shapes::icosphere(0), 4, 100);
        assert!(fit_full_offsets(&src, &[], &FitConfig::default()).is_err());
        let cfg = FitConfig {
            max_outer_iterations: 0,
            ..Default::default()
        };
        assert!(fit_full_offsets(&src, src.points(), &cfg).is_err());
    }
}
