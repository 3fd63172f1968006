use std::sync::OnceLock;

use metaforge::fit::SourceShape;
use metaforge::losses::{
    chamfer, covariance_loss, laplacian_loss, normal_loss, orthogonality_loss, reflect_x, sparsity_loss, svd_loss,
    symmetry_loss,
};
use metaforge::metrics::{coverage, mmd};
use metaforge::{
    apply_control_offsets, apply_subspace, clamp_coefficients, sample_coefficients, shapes, DeformationSubspace,
    Domain, MetaHandle, TriMesh, Vec3,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn source() -> &'static SourceShape {
    static SRC: OnceLock<SourceShape> = OnceLock::new();
    SRC.get_or_init(|| SourceShape::build(shapes::icosphere(2), 10, 400, 3).unwrap())
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(vec3(), 1..max)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

/// Two unit handles over the shared source with random ranges around 0.
fn subspace() -> impl Strategy<Value = DeformationSubspace> {
    let c = source().control_count();
    (matrix(c, 3), matrix(c, 3), -1.0f64..0.0, 0.0f64..1.0).prop_filter_map("zero handle", |(h1, h2, lo, hi)| {
        let handles = vec![MetaHandle::normalized(h1).ok()?, MetaHandle::normalized(h2).ok()?];
        DeformationSubspace::new(handles, vec![(lo, hi), (lo / 2.0, hi * 2.0)], source().coords().clone()).ok()
    })
}

fn max_dist(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deformation_is_affine_in_the_coefficients(
        sub in subspace(),
        a in prop::collection::vec(-1.0f64..1.0, 2),
        b in prop::collection::vec(-1.0f64..1.0, 2),
        lambda in -1.0f64..2.0,
    ) {
        let src = source();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        let g = |c: &[f64]| apply_subspace(&sub, c, src.points(), Domain::Points).unwrap();
        let (ga, gb, gm) = (g(&a), g(&b), g(&mix));
        let blend: Vec<Vec3> = ga.iter().zip(&gb).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect();
        prop_assert!(max_dist(&gm, &blend) <= 1e-9);
    }

    #[test]
    fn constant_offsets_translate_everything(t in vec3()) {
        let src = source();
        let delta = DMatrix::from_fn(src.control_count(), 3, |_, k| t[k]);
        let moved = apply_control_offsets(src.mesh().vertices(), src.coords().vertex_weights(), &delta).unwrap();
        let shifted: Vec<Vec3> = src.mesh().vertices().iter().map(|p| p + t).collect();
        prop_assert!(max_dist(&moved, &shifted) <= 1e-6);
    }

    #[test]
    fn controls_follow_their_offsets(delta in matrix(10, 3)) {
        let src = source();
        let moved = apply_control_offsets(src.mesh().vertices(), src.coords().vertex_weights(), &delta).unwrap();
        for (j, &v) in src.coords().controls().indices().iter().enumerate() {
            let expected = src.mesh().vertices()[v] + Vec3::new(delta[(j, 0)], delta[(j, 1)], delta[(j, 2)]);
            prop_assert!((moved[v] - expected).amax() <= 1e-12);
        }
    }

    #[test]
    fn clamped_and_sampled_coefficients_are_in_range(
        sub in subspace(),
        a in prop::collection::vec(-3.0f64..3.0, 2),
        seed in any::<u64>(),
    ) {
        let clamped = clamp_coefficients(&sub, &a).unwrap();
        let again = clamp_coefficients(&sub, &clamped).unwrap();
        prop_assert_eq!(&clamped, &again);
        let drawn = sample_coefficients(&sub, seed);
        for (x, &(lo, hi)) in clamped.iter().chain(drawn.iter()).zip(sub.ranges().iter().cycle()) {
            prop_assert!(lo <= *x && *x <= hi);
        }
    }

    #[test]
    fn chamfer_is_a_symmetric_nonnegative_set_function(a in cloud(40), b in cloud(40), shift in 0usize..40) {
        let ab = chamfer(&a, &b).unwrap().value;
        let ba = chamfer(&b, &a).unwrap().value;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        let mut rotated = a.clone();
        rotated.rotate_left(shift % a.len());
        prop_assert!((chamfer(&rotated, &b).unwrap().value - ab).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(chamfer(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn mirrored_clouds_have_zero_symmetry_loss(half in cloud(30)) {
        let mut full = half.clone();
        full.extend(half.iter().map(reflect_x));
        prop_assert_eq!(symmetry_loss(&full).unwrap().value, 0.0);
        prop_assert!(symmetry_loss(&half).unwrap().value >= 0.0);
    }

    #[test]
    fn geometric_terms_ignore_translation_and_scale(t in vec3(), scale in 0.2f64..5.0, delta in matrix(10, 3)) {
        let src = source();
        let (verts, _) = src.deform(&(delta * 0.05)).unwrap();
        let base_lap = laplacian_loss(src.mesh(), &verts).unwrap().value;
        let base_nor = normal_loss(src.mesh(), &verts).unwrap().value;
        let similar: Vec<Vec3> = verts.iter().map(|p| scale * p + t).collect();
        let lap = laplacian_loss(src.mesh(), &similar).unwrap().value;
        let nor = normal_loss(src.mesh(), &similar).unwrap().value;
        prop_assert!(base_lap >= 0.0 && base_nor >= 0.0);
        prop_assert!((lap - base_lap).abs() <= 1e-9);
        prop_assert!((nor - base_nor).abs() <= 1e-9);
    }

    #[test]
    fn covariance_ignores_a_common_shift(a in matrix(6, 3), shift in prop::collection::vec(-5.0f64..5.0, 3)) {
        let shifted = DMatrix::from_fn(6, 3, |i, j| a[(i, j)] + shift[j]);
        for diag in [true, false] {
            let x = covariance_loss(&a, diag).unwrap().value;
            let y = covariance_loss(&shifted, diag).unwrap().value;
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn disentanglement_terms_are_nonnegative_and_homogeneous(b in matrix(3, 12), a in matrix(5, 3), s in 0.1f64..4.0) {
        let sp = sparsity_loss(&b, &a).unwrap().value;
        prop_assert!(sp >= 0.0);
        prop_assert!((sparsity_loss(&(&b * s), &(&a * s)).unwrap().value - s * sp).abs() <= 1e-9);
        let ortho = orthogonality_loss(&b).value;
        prop_assert!(ortho >= 0.0);
        prop_assert!((orthogonality_loss(&(&b * s)).value - s * s * ortho).abs() <= 1e-9);
        let svd = svd_loss(&b).unwrap().value;
        prop_assert!(svd >= -1e-12);
        prop_assert!((svd_loss(&(&b * s)).unwrap().value - s * s * svd).abs() <= 1e-9);
    }

    #[test]
    fn set_metrics_are_bounded(a in prop::collection::vec(cloud(12), 1..4), b in prop::collection::vec(cloud(12), 1..4)) {
        let cov = coverage(&a, &b).unwrap();
        prop_assert!(cov >= 1.0 / b.len() as f64 && cov <= 1.0);
        prop_assert!(mmd(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(coverage(&b, &b).unwrap(), 1.0);
        prop_assert_eq!(mmd(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn normalization_centers_and_bounds(jitter in prop::collection::vec(vec3(), 42), scale in 0.1f64..10.0) {
        let base = shapes::icosphere(1);
        let verts: Vec<Vec3> = base.vertices().iter().zip(&jitter).map(|(p, j)| scale * (p + 0.1 * j) + Vec3::new(3.0, -2.0, 1.0)).collect();
        let mesh = TriMesh::new(verts, base.faces().to_vec()).unwrap().normalized().unwrap();
        prop_assert!(mesh.centroid().norm() <= 1e-9);
        let r = mesh.vertices().iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!((r - 1.0).abs() <= 1e-9);
    }
}
