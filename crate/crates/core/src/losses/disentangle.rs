//! Regularizers that keep meta-handles sparse, decorrelated and
//! full-rank.
//!
//! Handles are passed stacked as an m×3c matrix whose row `i` is handle
//! `Mᵢ` (c×3) flattened row-major, so entry `(i, 3j + k)` is the offset of
//! control `j` along axis `k`. Coefficients are a K×m matrix, one row per
//! target.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};

use crate::error::{invalid, Result};

/// Value and gradient of a disentanglement term. Gradients with respect
/// to inputs a term does not depend on are zero matrices.
#[derive(Debug, Clone)]
pub struct MatrixLoss {
    pub value: f64,
    pub grad: DMatrix<f64>,
}

/// Stacks c×3 handle matrices into the m×3c layout.
pub fn stack_handles(handles: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = handles.first().ok_or_else(|| invalid("no handles"))?;
    let c = first.nrows();
    let mut b = DMatrix::zeros(handles.len(), 3 * c);
    for (i, h) in handles.iter().enumerate() {
        if h.nrows() != c || h.ncols() != 3 {
            return Err(invalid(format!("handle {i} is {}×{}, expected {c}×3", h.nrows(), h.ncols())));
        }
        for j in 0..c {
            for k in 0..3 {
                b[(i, 3 * j + k)] = h[(j, k)];
            }
        }
    }
    Ok(b)
}

/// Row `i` of a stacked matrix as a c×3 handle.
pub fn unstack_handle(b: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    DMatrix::from_fn(b.ncols() / 3, 3, |j, k| b[(i, 3 * j + k)])
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

#[derive(Debug, Clone)]
pub struct SparsityLoss {
    pub value: f64,
    pub grad_handles: DMatrix<f64>,
    pub grad_coefficients: DMatrix<f64>,
}

/// `(1/m) Σᵢ ‖Mᵢ‖₁ + mean over rows of ‖a‖₁`, with gradients for both
/// arguments.
pub fn sparsity_loss(b: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<SparsityLoss> {
    let m = b.nrows();
    if m == 0 {
        return Err(invalid("sparsity loss needs at least one handle"));
    }
    if a.ncols() != m {
        return Err(invalid(format!("{} coefficient columns for {m} handles", a.ncols())));
    }
    let handle_part = l1(b) / m as f64;
    let k = a.nrows().max(1) as f64;
    let coeff_part = l1(a) / k;
    Ok(SparsityLoss {
        value: handle_part + coeff_part,
        grad_handles: b.map(sign) / m as f64,
        grad_coefficients: a.map(sign) / k,
    })
}

/// Centered columns and the population covariance of a K×m matrix.
fn covariance(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = a.nrows() as f64;
    let mut centered = a.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.sum() / k;
        col.add_scalar_mut(-mean);
    }
    let cov = centered.transpose() * &centered / k;
    (centered, cov)
}

/// Entrywise L1 norm of the population covariance of the coefficient
/// columns. With `include_diagonal` false only cross-covariances count.
pub fn covariance_loss(a: &DMatrix<f64>, include_diagonal: bool) -> Result<MatrixLoss> {
    if a.nrows() < 2 {
        return Err(invalid(format!(
            "covariance loss needs at least 2 coefficient rows, got {}",
            a.nrows()
        )));
    }
    let (centered, cov) = covariance(a);
    let mut s = cov.map(sign);
    if !include_diagonal {
        s.fill_diagonal(0.0);
    }
    let value = cov
        .iter()
        .zip(s.iter())
        .map(|(c, si)| c * si)
        .sum();
    // Centered columns have zero mean, so projecting the gradient back
    // through the centering is the identity.
    let grad = centered * s * (2.0 / a.nrows() as f64);
    Ok(MatrixLoss { value, grad })
}

/// `sqrt(Σ_{i≠j} ‖Mᵢ ∘ Mⱼ‖₁²)` over ordered pairs.
pub fn orthogonality_loss(b: &DMatrix<f64>) -> MatrixLoss {
    let m = b.nrows();
    let abs = b.abs();
    let overlap = &abs * abs.transpose();
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                sum += overlap[(i, j)] * overlap[(i, j)];
            }
        }
    }
    let value = sum.sqrt();
    let mut grad = DMatrix::zeros(m, b.ncols());
    if value > 0.0 {
        let mut off = overlap;
        off.fill_diagonal(0.0);
        // Each unordered pair appears twice in the sum.
        let weighted = off * &abs * (2.0 / value);
        grad = weighted.component_mul(&b.map(sign));
    }
    MatrixLoss { value, grad }
}

/// Smallest eigenvalue of `MᵢᵀMᵢ` and its unit eigenvector.
fn smallest_gram_eigen(b: &DMatrix<f64>, i: usize) -> (f64, nalgebra::Vector3<f64>) {
    let mut gram = Matrix3::<f64>::zeros();
    for j in 0..b.ncols() / 3 {
        for p in 0..3 {
            for q in 0..3 {
                gram[(p, q)] += b[(i, 3 * j + p)] * b[(i, 3 * j + q)];
            }
        }
    }
    let eig = SymmetricEigen::new(gram);
    let k = eig.eigenvalues.imin();
    (eig.eigenvalues[k].max(0.0), eig.eigenvectors.column(k).into_owned())
}

/// `(1/m) Σᵢ λ_min(MᵢᵀMᵢ)`.
pub fn svd_loss(b: &DMatrix<f64>) -> Result<MatrixLoss> {
    let m = b.nrows();
    if m == 0 || !b.ncols().is_multiple_of(3) {
        return Err(invalid("svd loss needs at least one c×3 handle"));
    }
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(m, b.ncols());
    for i in 0..m {
        let (lambda, v) = smallest_gram_eigen(b, i);
        value += lambda;
        // d λ_min / dM = 2 M v vᵀ for a simple eigenvalue.
        for j in 0..b.ncols() / 3 {
            let mv: f64 = (0..3).map(|k| b[(i, 3 * j + k)] * v[k]).sum();
            for k in 0..3 {
                grad[(i, 3 * j + k)] = 2.0 * mv * v[k] / m as f64;
            }
        }
    }
    Ok(MatrixLoss {
        value: value / m as f64,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn fd_error(f: impl Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>, grad: &DMatrix<f64>) -> f64 {
        let h = 1e-5;
        let mut y = x.clone();
        let (mut diff, mut norm) = (0.0, 0.0);
        for idx in 0..x.len() {
            let orig = y[idx];
            y[idx] = orig + h;
            let fp = f(&y);
            y[idx] = orig - h;
            let fm = f(&y);
            y[idx] = orig;
            let num = (fp - fm) / (2.0 * h);
            diff += (num - grad[idx]).powi(2);
            norm += num * num;
        }
        diff.sqrt() / norm.sqrt().max(1e-8)
    }

    #[test]
    fn sparsity_values() {
        let zero = sparsity_loss(&DMatrix::zeros(2, 6), &DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(zero.value, 0.0);
        let mut b = DMatrix::zeros(1, 3);
        b[(0, 1)] = 1.0;
        let a = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(sparsity_loss(&b, &a).unwrap().value, 3.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random(&mut rng, 3, 12);
        let a = random(&mut rng, 5, 3);
        let base = sparsity_loss(&b, &a).unwrap().value;
        let scaled = sparsity_loss(&(&b * 2.5), &(&a * 2.5)).unwrap().value;
        assert!((scaled - 2.5 * base).abs() <= 1e-12);
    }

    #[test]
    fn covariance_values() {
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(covariance_loss(&rows, true).unwrap().value, 0.0);
        let pm = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        assert_eq!(covariance_loss(&pm, true).unwrap().value, 1.0);
        let anti = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(covariance_loss(&anti, true).unwrap().value, 4.0);
        assert_eq!(covariance_loss(&anti, false).unwrap().value, 2.0);
        assert!(covariance_loss(&DMatrix::zeros(1, 3), true).is_err());
    }

    #[test]
    fn orthogonality_values() {
        let mut b = DMatrix::zeros(2, 6);
        b[(0, 0)] = 1.0;
        b[(1, 4)] = -3.0;
        assert_eq!(orthogonality_loss(&b).value, 0.0);
        b[(1, 0)] = 1.0;
        b[(1, 4)] = 0.0;
        assert!((orthogonality_loss(&b).value - 2f64.sqrt()).abs() <= 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(orthogonality_loss(&random(&mut rng, 1, 9)).value, 0.0);
    }

    #[test]
    fn svd_values() {
        // Rows e1, e2, e3 of a single unnormalized 3×3 handle.
        let b = DMatrix::from_row_slice(1, 9, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert!((svd_loss(&b).unwrap().value - 1.0).abs() <= 1e-10);
        let collinear = DMatrix::from_row_slice(1, 9, &[1., 2., 3., -2., -4., -6., 0.5, 1., 1.5]);
        assert!(svd_loss(&collinear).unwrap().value.abs() <= 1e-10);
        let planar = DMatrix::from_row_slice(2, 6, &[1., 2., 0., -3., 0.5, 0., 0., 1., 0., 4., 4., 0.]);
        assert!(svd_loss(&planar).unwrap().value.abs() <= 1e-10);
    }

    #[test]
    fn stack_roundtrip() {
        let h = vec![
            DMatrix::from_fn(4, 3, |j, k| (j * 3 + k) as f64),
            DMatrix::from_fn(4, 3, |j, k| -((j + k) as f64)),
        ];
        let b = stack_handles(&h).unwrap();
        assert_eq!(b[(0, 5)], 5.0);
        assert_eq!(unstack_handle(&b, 1), h[1]);
        assert!(stack_handles(&[]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = rng.gen_range(1..5);
            let c = rng.gen_range(2..6);
            let k = rng.gen_range(2..8);
            let b = random(&mut rng, m, 3 * c);
            let a = random(&mut rng, k, m);

            let sp = sparsity_loss(&b, &a).unwrap();
            assert!(fd_error(|x| sparsity_loss(x, &a).unwrap().value, &b, &sp.grad_handles) <= 1e-3);
            assert!(fd_error(|x| sparsity_loss(&b, x).unwrap().value, &a, &sp.grad_coefficients) <= 1e-3);

            for diag in [true, false] {
                let g = covariance_loss(&a, diag).unwrap().grad;
                assert!(fd_error(|x| covariance_loss(x, diag).unwrap().value, &a, &g) <= 1e-3);
            }
            if m > 1 {
                let g = orthogonality_loss(&b).grad;
                assert!(fd_error(|x| orthogonality_loss(x).value, &b, &g) <= 1e-3);
            }
            let g = svd_loss(&b).unwrap().grad;
            assert!(fd_error(|x| svd_loss(x).unwrap().value, &b, &g) <= 1e-3);
        }
    }
}
