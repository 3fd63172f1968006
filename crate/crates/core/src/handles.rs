//! Control-point selection and biharmonic deformation coordinates.
//!
//! Control points are mesh vertices picked by farthest point sampling over
//! edge-graph distances. The coordinates `W` (vertices × controls) solve
//! the bi-Laplacian system `L M⁻¹ L` with the control rows pinned to the
//! identity, so each column is the smooth response to moving one control.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::Ldl;

use crate::error::{invalid, Error, Result};
use crate::mesh::{CotanLaplacian, EdgeGraph, PointCloud, TriMesh};

/// Default number of control points.
pub const DEFAULT_CONTROL_COUNT: usize = 50;

/// The vertices that act as handles, with their rest positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPointSet {
    indices: Vec<usize>,
    rest_positions: Vec<crate::mesh::Vec3>,
}

impl ControlPointSet {
    /// Validates `indices` against `mesh` and copies the rest positions.
    pub fn new(mesh: &TriMesh, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(invalid("control set must not be empty"));
        }
        let n = mesh.vertex_count();
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(invalid(format!("control index {i} out of range for {n} vertices")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(invalid(format!("control index {i} repeated")));
            }
        }
        let rest_positions = indices.iter().map(|&i| mesh.vertices()[i]).collect();
        Ok(Self {
            indices,
            rest_positions,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn rest_positions(&self) -> &[crate::mesh::Vec3] {
        &self.rest_positions
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Vertex with the largest distance from the vertex centroid; the smallest
/// index wins ties.
pub fn default_seed_vertex(mesh: &TriMesh) -> usize {
    farthest_from_centroid(mesh, 0..mesh.vertex_count())
}

fn farthest_from_centroid(mesh: &TriMesh, candidates: impl Iterator<Item = usize>) -> usize {
    let centroid = mesh.centroid();
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for v in candidates {
        let d = (mesh.vertices()[v] - centroid).norm_squared();
        if d > best.1 {
            best = (v, d);
        }
    }
    best.0
}

/// Farthest point sampling over shortest-path distances on `graph`.
///
/// The first pick is `seed_vertex`; each later pick maximizes the distance
/// to the picks so far, ties going to the smallest index. On a disconnected
/// graph every component runs its own sampling with a share of `count`
/// proportional to its vertex count (at least one each when `count`
/// allows); components other than the seed's start from their vertex
/// farthest from the mesh centroid.
pub fn geodesic_fps(
    mesh: &TriMesh,
    graph: &EdgeGraph,
    count: usize,
    seed_vertex: usize,
) -> Result<ControlPointSet> {
    let n = mesh.vertex_count();
    if graph.vertex_count() != n {
        return Err(invalid("graph and mesh vertex counts differ"));
    }
    if count == 0 || count > n {
        return Err(invalid(format!("control count {count} must be in 1..={n}")));
    }
    if seed_vertex >= n {
        return Err(invalid(format!("seed vertex {seed_vertex} out of range")));
    }

    let (labels, components) = graph.components();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); components];
    for (v, &l) in labels.iter().enumerate() {
        members[l].push(v);
    }
    let shares = allocate(&members.iter().map(Vec::len).collect::<Vec<_>>(), count);

    let seed_component = labels[seed_vertex];
    let mut order: Vec<usize> = vec![seed_component];
    order.extend((0..components).filter(|&c| c != seed_component));

    let mut dist = vec![f64::INFINITY; n];
    let mut picked = vec![false; n];
    let mut indices = Vec::with_capacity(count);
    for comp in order {
        if shares[comp] == 0 {
            continue;
        }
        let first = if comp == seed_component {
            seed_vertex
        } else {
            farthest_from_centroid(mesh, members[comp].iter().copied())
        };
        let mut pick = first;
        for _ in 0..shares[comp] {
            picked[pick] = true;
            indices.push(pick);
            graph.relax_from(pick, &mut dist);
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for &v in &members[comp] {
                if !picked[v] && dist[v] > best.1 {
                    best = (v, dist[v]);
                }
            }
            pick = best.0;
        }
    }
    ControlPointSet::new(mesh, indices)
}

/// Splits `count` over groups proportionally to `sizes` by largest
/// remainder, guaranteeing one per group when `count` allows and never
/// exceeding a group's size.
fn allocate(sizes: &[usize], count: usize) -> Vec<usize> {
    let k = sizes.len();
    let total: usize = sizes.iter().sum();
    let mut out = vec![0usize; k];
    let mut left = count;
    if count >= k {
        out.iter_mut().for_each(|x| *x = 1);
        left -= k;
    }
    let capacity: Vec<usize> = sizes.iter().zip(&out).map(|(s, o)| s - o).collect();
    let cap_total: usize = capacity.iter().sum();
    if left > 0 && cap_total > 0 {
        let exact: Vec<f64> = capacity
            .iter()
            .map(|&s| left as f64 * s as f64 / cap_total as f64)
            .collect();
        let mut given = 0;
        for (o, e) in out.iter_mut().zip(&exact) {
            *o += e.floor() as usize;
            given += e.floor() as usize;
        }
        let mut rank: Vec<usize> = (0..k).collect();
        rank.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut remaining = left - given;
        for &g in rank.iter().cycle() {
            if remaining == 0 {
                break;
            }
            if out[g] < sizes[g] {
                out[g] += 1;
                remaining -= 1;
            }
        }
    }
    debug_assert_eq!(out.iter().sum::<usize>(), count.min(total));
    out
}

/// Linear map from control offsets to vertex (and optionally sample point)
/// offsets.
#[derive(Debug, Clone)]
pub struct DeformCoordinates {
    vertices: DMatrix<f64>,
    points: Option<DMatrix<f64>>,
    controls: ControlPointSet,
}

impl DeformCoordinates {
    /// Wraps an externally computed vertex matrix. Dimensions must agree
    /// with `controls`; control rows are checked to be one-hot within 1e-6
    /// and then set exactly.
    pub fn from_matrix(mut vertices: DMatrix<f64>, controls: ControlPointSet) -> Result<Self> {
        let c = controls.len();
        if vertices.ncols() != c {
            return Err(invalid(format!(
                "coordinate matrix has {} columns for {c} controls",
                vertices.ncols()
            )));
        }
        if vertices.iter().any(|x| !x.is_finite()) {
            return Err(invalid("coordinate matrix has non-finite entries"));
        }
        for (j, &row) in controls.indices().iter().enumerate() {
            if row >= vertices.nrows() {
                return Err(invalid(format!("control index {row} beyond matrix rows")));
            }
            for k in 0..c {
                let expected = if k == j { 1.0 } else { 0.0 };
                if (vertices[(row, k)] - expected).abs() > 1e-6 {
                    return Err(invalid(format!(
                        "row of control {j} (vertex {row}) is not one-hot"
                    )));
                }
                vertices[(row, k)] = expected;
            }
        }
        Ok(Self {
            vertices,
            points: None,
            controls,
        })
    }

    /// n×c matrix over mesh vertices.
    pub fn vertex_weights(&self) -> &DMatrix<f64> {
        &self.vertices
    }

    /// p×c matrix over the interpolated point cloud, if computed.
    pub fn point_weights(&self) -> Option<&DMatrix<f64>> {
        self.points.as_ref()
    }

    pub fn controls(&self) -> &ControlPointSet {
        &self.controls
    }

    pub fn control_count(&self) -> usize {
        self.controls.len()
    }

    /// Largest deviation of a vertex row sum from one.
    pub fn partition_of_unity_error(&self) -> f64 {
        self.vertices
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Symmetric `L M⁻¹ L` with `M` the lumped mass. Vertices without mass
/// (not referenced by any face) get a zero row.
pub fn bilaplacian(lap: &CotanLaplacian) -> CsMat<f64> {
    let n = lap.dim();
    let inv_mass: Vec<f64> = lap
        .mass
        .iter()
        .map(|&m| if m > 0.0 { 1.0 / m } else { 0.0 })
        .collect();
    // Accumulating in a fixed order for (i, j) and (j, i) keeps the result
    // exactly symmetric.
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (k, row) in lap.matrix.outer_iterator().enumerate() {
        let s = inv_mass[k];
        if s == 0.0 {
            continue;
        }
        for (i, &lik) in row.iter() {
            for (j, &lkj) in row.iter() {
                *entries.entry((i, j)).or_insert(0.0) += s * (lik * lkj);
            }
        }
    }
    let mut trip = TriMat::with_capacity((n, n), entries.len());
    for ((i, j), v) in entries {
        trip.add_triplet(i, j, v);
    }
    trip.to_csr()
}

/// Biharmonic coordinates of `mesh` for `controls`.
///
/// Solves `A_ff W_f = -A_fc` with `A = L M⁻¹ L`, factoring `A_ff` once
/// (LDLᵀ with reverse Cuthill–McKee ordering) and solving the `c` columns
/// in parallel. Control rows are set to the identity.
pub fn compute_biharmonic_coordinates(
    mesh: &TriMesh,
    lap: &CotanLaplacian,
    controls: &ControlPointSet,
) -> Result<DeformCoordinates> {
    let n = mesh.vertex_count();
    if lap.dim() != n {
        return Err(invalid("Laplacian does not match the mesh"));
    }
    let c = controls.len();

    let (labels, components) = EdgeGraph::from_mesh(mesh).components();
    let mut has_control = vec![false; components];
    for &i in controls.indices() {
        has_control[labels[i]] = true;
    }
    if let Some(component) = has_control.iter().position(|&h| !h) {
        let vertices = labels.iter().filter(|&&l| l == component).count();
        return Err(Error::RankDeficient {
            component,
            vertices,
        });
    }

    // Position of each vertex in the free block, or the control column.
    const NONE: usize = usize::MAX;
    let mut free_index = vec![NONE; n];
    let mut control_col = vec![NONE; n];
    for (j, &i) in controls.indices().iter().enumerate() {
        control_col[i] = j;
    }
    let mut free = Vec::with_capacity(n - c);
    for v in 0..n {
        if control_col[v] == NONE {
            free_index[v] = free.len();
            free.push(v);
        }
    }

    let mut weights = DMatrix::zeros(n, c);
    for (j, &i) in controls.indices().iter().enumerate() {
        weights[(i, j)] = 1.0;
    }
    if free.is_empty() {
        return DeformCoordinates::from_matrix(weights, controls.clone());
    }

    let a = bilaplacian(lap);
    let nf = free.len();
    let mut a_ff = TriMat::new((nf, nf));
    let mut rhs = vec![vec![0.0; nf]; c];
    for (row, vec) in a.outer_iterator().enumerate() {
        let fr = free_index[row];
        if fr == NONE {
            continue;
        }
        for (col, &v) in vec.iter() {
            if free_index[col] != NONE {
                a_ff.add_triplet(fr, free_index[col], v);
            } else {
                rhs[control_col[col]][fr] = -v;
            }
        }
    }
    let a_ff: CsMat<f64> = a_ff.to_csc();

    let factor = Ldl::new()
        .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
        .check_symmetry(SymmetryCheck::DontCheckSymmetry)
        .numeric(a_ff.view())
        .map_err(|e| Error::DegenerateGeometry(format!("bi-Laplacian factorization failed: {e}")))?;
    let max_pivot = factor.d().iter().fold(0.0_f64, |m, &d| m.max(d.abs()));
    if factor.d().iter().any(|&d| d <= max_pivot * 1e-14) {
        return Err(Error::DegenerateGeometry(
            "bi-Laplacian restricted to free vertices is not positive definite".into(),
        ));
    }

    let columns: Vec<Vec<f64>> = rhs.par_iter().map(|b| factor.solve(b)).collect();
    for (j, col) in columns.iter().enumerate() {
        for (fi, &v) in free.iter().zip(col) {
            weights[(*fi, j)] = v;
        }
    }
    if weights.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateGeometry("biharmonic solve produced non-finite weights".into()));
    }
    DeformCoordinates::from_matrix(weights, controls.clone())
}

/// Fills the point weights: each sample's row is the barycentric blend of
/// the vertex rows of its face.
pub fn interpolate_coordinates(
    coords: &DeformCoordinates,
    mesh: &TriMesh,
    cloud: &PointCloud,
) -> Result<DeformCoordinates> {
    let w = &coords.vertices;
    if w.nrows() != mesh.vertex_count() {
        return Err(invalid("coordinates do not match the mesh"));
    }
    let c = w.ncols();
    let mut points = DMatrix::zeros(cloud.len(), c);
    for (k, (&face, bary)) in cloud.source_faces.iter().zip(&cloud.barycentric).enumerate() {
        let tri = mesh
            .faces()
            .get(face)
            .ok_or_else(|| invalid(format!("sample {k} references face {face}, mesh has {}", mesh.face_count())))?;
        for j in 0..c {
            points[(k, j)] =
                bary[0] * w[(tri[0], j)] + bary[1] * w[(tri[1], j)] + bary[2] * w[(tri[2], j)];
        }
    }
    Ok(DeformCoordinates {
        vertices: coords.vertices.clone(),
        points: Some(points),
        controls: coords.controls.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cotangent_laplacian, sample_surface, Vec3};
    use crate::shapes;

    fn coords_for(mesh: &TriMesh, c: usize) -> DeformCoordinates {
        let graph = EdgeGraph::from_mesh(mesh);
        let controls = geodesic_fps(mesh, &graph, c, default_seed_vertex(mesh)).unwrap();
        let lap = cotangent_laplacian(mesh).unwrap();
        compute_biharmonic_coordinates(mesh, &lap, &controls).unwrap()
    }

    fn path_mesh() -> (TriMesh, EdgeGraph) {
        // Collinear vertices: graph distances d(0,1) = 1, d(0,2) = 2.
        let m = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        (m.clone(), EdgeGraph::from_mesh(&m))
    }

    #[test]
    fn fps_on_path() {
        let (mesh, graph) = path_mesh();
        let set = geodesic_fps(&mesh, &graph, 2, 0).unwrap();
        assert_eq!(set.indices(), &[0, 2]);
        assert_eq!(geodesic_fps(&mesh, &graph, 1, 1).unwrap().indices(), &[1]);
        let mut all = geodesic_fps(&mesh, &graph, 3, 0).unwrap().indices().to_vec();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(geodesic_fps(&mesh, &graph, 4, 0).is_err());
    }

    #[test]
    fn fps_deterministic_and_distinct() {
        let m = shapes::icosphere(2);
        let g = EdgeGraph::from_mesh(&m);
        let a = geodesic_fps(&m, &g, 20, 5).unwrap();
        let b = geodesic_fps(&m, &g, 20, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.indices()[0], 5);
        let mut s = a.indices().to_vec();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 20);
        for (j, &i) in a.indices().iter().enumerate() {
            assert_eq!(a.rest_positions()[j], m.vertices()[i]);
        }
    }

    #[test]
    fn fps_second_pick_is_farthest() {
        let m = shapes::icosphere(1);
        let g = EdgeGraph::from_mesh(&m);
        let set = geodesic_fps(&m, &g, 2, 0).unwrap();
        let d = g.shortest_paths(0);
        let max = d.iter().cloned().fold(0.0, f64::max);
        let expected = d.iter().position(|&x| x == max).unwrap();
        assert_eq!(set.indices()[1], expected);
    }

    #[test]
    fn allocation_rules() {
        assert_eq!(allocate(&[10, 30], 4), vec![1, 3]);
        assert_eq!(allocate(&[10, 30], 2), vec![1, 1]);
        assert_eq!(allocate(&[10, 30], 1), vec![0, 1]);
        assert_eq!(allocate(&[2, 2], 4), vec![2, 2]);
        assert_eq!(allocate(&[1, 9], 10), vec![1, 9]);
    }

    #[test]
    fn disconnected_mesh_gets_controls_everywhere() {
        let a = shapes::icosphere(0);
        let mut verts = a.vertices().to_vec();
        verts.extend(a.vertices().iter().map(|v| v * 0.5 + Vec3::new(3.0, 0.0, 0.0)));
        let mut faces = a.faces().to_vec();
        faces.extend(a.faces().iter().map(|f| f.map(|v| v + 12)));
        let m = TriMesh::new(verts, faces).unwrap();
        let g = EdgeGraph::from_mesh(&m);
        let set = geodesic_fps(&m, &g, 4, 0).unwrap();
        assert_eq!(set.indices()[0], 0);
        assert_eq!(set.indices().iter().filter(|&&i| i < 12).count(), 2);
        let lap = cotangent_laplacian(&m).unwrap();
        let w = compute_biharmonic_coordinates(&m, &lap, &set).unwrap();
        assert!(w.partition_of_unity_error() < 1e-6);

        // No control on the second component.
        let only_first = ControlPointSet::new(&m, vec![0, 3]).unwrap();
        assert!(matches!(
            compute_biharmonic_coordinates(&m, &lap, &only_first),
            Err(Error::RankDeficient { component: 1, vertices: 12 })
        ));
    }

    #[test]
    fn single_control_gives_constant_column() {
        for m in [shapes::icosphere(1), shapes::cube(2), shapes::open_cylinder(8, 3)] {
            let w = coords_for(&m, 1);
            for x in w.vertex_weights().iter() {
                assert!((x - 1.0).abs() < 1e-9, "{x}");
            }
        }
    }

    #[test]
    fn control_rows_one_hot_and_rows_sum_to_one() {
        let m = shapes::icosphere(2);
        let w = coords_for(&m, 12);
        for (j, &i) in w.controls().indices().iter().enumerate() {
            for k in 0..12 {
                assert_eq!(w.vertex_weights()[(i, k)], if k == j { 1.0 } else { 0.0 });
            }
        }
        assert!(w.partition_of_unity_error() <= 1e-6);
    }

    #[test]
    fn all_vertices_as_controls() {
        let m = shapes::tetrahedron();
        let w = coords_for(&m, 4);
        assert!(w.partition_of_unity_error() == 0.0);
    }

    #[test]
    fn bilaplacian_is_symmetric_with_zero_rows() {
        let m = shapes::cube(2);
        let a = bilaplacian(&cotangent_laplacian(&m).unwrap());
        for (i, row) in a.outer_iterator().enumerate() {
            let s: f64 = row.iter().map(|(_, v)| v).sum();
            assert!(s.abs() < 1e-9);
            for (j, &v) in row.iter() {
                assert_eq!(Some(&v), a.get(j, i));
            }
        }
    }

    #[test]
    fn interpolation_blends_rows() {
        let m = shapes::icosphere(1);
        let w = coords_for(&m, 6);
        let mut cloud = sample_surface(&m, 200, 1).unwrap();
        cloud.source_faces.extend([3, 3]);
        cloud.barycentric.push([1.0, 0.0, 0.0]);
        cloud.barycentric.push([1.0 / 3.0; 3]);
        cloud.points.extend([Vec3::zeros(), Vec3::zeros()]);
        let w = interpolate_coordinates(&w, &m, &cloud).unwrap();
        let wp = w.point_weights().unwrap();
        let wv = w.vertex_weights();
        let [a, b, c] = m.faces()[3];
        for j in 0..6 {
            assert_eq!(wp[(200, j)], wv[(a, j)]);
            let mean = (wv[(a, j)] + wv[(b, j)] + wv[(c, j)]) / 3.0;
            assert!((wp[(201, j)] - mean).abs() < 1e-15);
        }
        for r in wp.row_iter() {
            assert!((r.sum() - 1.0).abs() <= 1e-6);
        }

        cloud.source_faces.push(10_000);
        cloud.barycentric.push([1.0, 0.0, 0.0]);
        cloud.points.push(Vec3::zeros());
        assert!(interpolate_coordinates(&w, &m, &cloud).is_err());
    }
}
