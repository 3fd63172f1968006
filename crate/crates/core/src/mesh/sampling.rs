//! Area-uniform surface sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

/// Points sampled on a mesh surface, each remembering its face and
/// barycentric weights so per-vertex data can be interpolated onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub source_faces: Vec<usize>,
    pub barycentric: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Draws `count` points: faces by area, then uniformly inside the face.
/// The stream is a ChaCha8 generator seeded from `seed`, so results are
/// reproducible across platforms.
pub fn sample_surface(mesh: &TriMesh, count: usize, seed: u64) -> Result<PointCloud> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.face_count());
    let mut total = 0.0;
    for f in 0..mesh.face_count() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if total <= 1e-12 {
        return Err(Error::DegenerateGeometry(format!(
            "total surface area {total:e} is too small to sample"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud = PointCloud {
        points: Vec::with_capacity(count),
        source_faces: Vec::with_capacity(count),
        barycentric: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let target = rng.gen::<f64>() * total;
        let face = cumulative
            .partition_point(|&c| c <= target)
            .min(mesh.face_count() - 1);
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let bary = [1.0 - s, s * (1.0 - r2), s * r2];
        let [a, b, c] = mesh.face_positions(face);
        cloud.points.push(a * bary[0] + b * bary[1] + c * bary[2]);
        cloud.source_faces.push(face);
        cloud.barycentric.push(bary);
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn single_triangle_points_inside() {
        let m = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let cloud = sample_surface(&m, 100, 7).unwrap();
        assert_eq!(cloud.len(), 100);
        for (p, b) in cloud.points.iter().zip(&cloud.barycentric) {
            assert!(b.iter().all(|&x| x >= 0.0));
            assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let [a, bb, c] = m.face_positions(0);
            assert!((a * b[0] + bb * b[1] + c * b[2] - p).norm() <= 1e-9);
        }
    }

    #[test]
    fn area_proportional() {
        // Areas 1 and 3.
        let m = TriMesh::new(
            vec![
                Vec3::zeros(),
                Vec3::new(2.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 5.0),
                Vec3::new(2.0, 0.0, 5.0),
                Vec3::new(0.0, 3.0, 5.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        assert!((m.face_area(0) - 1.0).abs() < 1e-12);
        assert!((m.face_area(1) - 3.0).abs() < 1e-12);
        let cloud = sample_surface(&m, 40_000, 11).unwrap();
        let frac = cloud.source_faces.iter().filter(|&&f| f == 1).count() as f64 / 40_000.0;
        assert!((frac - 0.75).abs() <= 0.01, "fraction {frac}");
    }

    #[test]
    fn per_face_fraction_within_three_sigma() {
        let m = shapes::open_cylinder(6, 2);
        let p = 20_000;
        let cloud = sample_surface(&m, p, 3).unwrap();
        let total = m.total_area();
        let mut counts = vec![0usize; m.face_count()];
        for &f in &cloud.source_faces {
            counts[f] += 1;
        }
        for (f, &c) in counts.iter().enumerate() {
            let q = m.face_area(f) / total;
            let sigma = (q * (1.0 - q) / p as f64).sqrt();
            assert!((c as f64 / p as f64 - q).abs() <= 3.0 * sigma + 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let m = shapes::icosphere(1);
        let a = sample_surface(&m, 500, 42).unwrap();
        let b = sample_surface(&m, 500, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_surface(&m, 500, 43).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn zero_area_rejected() {
        let m = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(sample_surface(&m, 5, 0), Err(Error::DegenerateGeometry(_))));
        assert!(sample_surface(&shapes::icosphere(0), 0, 0).is_err());
    }
}
