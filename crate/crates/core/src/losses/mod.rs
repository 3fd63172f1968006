//! Objective terms. Every term returns its value together with its
//! gradient.

mod chamfer;
mod disentangle;
mod geometric;

pub use chamfer::{
    chamfer, chamfer_fixed, chamfer_with, reflect_x, symmetry_loss, symmetry_loss_with,
    ChamferTerms, Correspondences, PointLoss,
};
pub use disentangle::{
    covariance_loss, orthogonality_loss, sparsity_loss, stack_handles, svd_loss, unstack_handle,
    MatrixLoss, SparsityLoss,
};
pub use geometric::{
    geometric_loss, laplacian_loss, normal_loss, GeometricLoss, GeometricReference, NormalLoss,
};

use crate::error::{invalid, Result};

/// Distance used inside the Chamfer sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChamferVariant {
    #[default]
    Squared,
    Unsquared,
}

/// Weights of the fitting, geometric and disentanglement terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_fit: f64,
    pub w_symm: f64,
    pub w_nor: f64,
    pub w_lap: f64,
    pub w_sp: f64,
    pub w_cov: f64,
    pub w_ortho: f64,
    pub w_svd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_fit: 1.0,
            w_symm: 1.0,
            w_nor: 0.1,
            w_lap: 3.0,
            w_sp: 1e-3,
            w_cov: 1e-3,
            w_ortho: 1e-3,
            w_svd: 0.3,
        }
    }
}

impl LossWeights {
    /// Only the fitting term, for pure Chamfer fits.
    pub fn fit_only() -> Self {
        Self {
            w_fit: 1.0,
            w_symm: 0.0,
            w_nor: 0.0,
            w_lap: 0.0,
            w_sp: 0.0,
            w_cov: 0.0,
            w_ortho: 0.0,
            w_svd: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("w_fit", self.w_fit),
            ("w_symm", self.w_symm),
            ("w_nor", self.w_nor),
            ("w_lap", self.w_lap),
            ("w_sp", self.w_sp),
            ("w_cov", self.w_cov),
            ("w_ortho", self.w_ortho),
            ("w_svd", self.w_svd),
        ];
        for (name, w) in all {
            if !(w.is_finite() && w >= 0.0) {
                return Err(invalid(format!("{name} must be finite and nonnegative, got {w}")));
            }
        }
        Ok(())
    }

    pub fn has_geometric(&self) -> bool {
        self.w_symm > 0.0 || self.w_nor > 0.0 || self.w_lap > 0.0
    }
}
