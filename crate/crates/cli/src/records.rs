//! JSON records written next to command outputs.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use metaforge::fit::LossBreakdown;

use crate::error::{io_err, CliError, Result};

pub const COEFFICIENTS_FORMAT: &str = "metaforge-coefficients";

/// One coefficient vector, as exported by the viewer and replayed by
/// `sample --coeffs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecord {
    pub format: String,
    pub version: u32,
    pub coefficients: Vec<f64>,
}

impl CoefficientRecord {
    pub fn new(coefficients: Vec<f64>) -> Self {
        Self {
            format: COEFFICIENTS_FORMAT.to_string(),
            version: 1,
            coefficients,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let record: Self = serde_json::from_str(&text).map_err(|e| CliError::Bundle {
            path: path.to_path_buf(),
            message: format!("coefficient record: {e}"),
        })?;
        if record.format != COEFFICIENTS_FORMAT || record.version != 1 {
            return Err(CliError::Bundle {
                path: path.to_path_buf(),
                message: format!("not a {COEFFICIENTS_FORMAT} version 1 record"),
            });
        }
        if record.coefficients.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Bundle {
                path: path.to_path_buf(),
                message: "coefficient record has non-finite values".into(),
            });
        }
        Ok(record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub total: f64,
    pub chamfer: f64,
    pub geometric: f64,
    pub symmetry: f64,
    pub normal: f64,
    pub laplacian: f64,
}

impl From<&LossBreakdown> for Breakdown {
    fn from(b: &LossBreakdown) -> Self {
        Self {
            total: b.total,
            chamfer: b.chamfer,
            geometric: b.geometric,
            symmetry: b.symmetry,
            normal: b.normal,
            laplacian: b.laplacian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub chamfer_dense: f64,
    pub dense_samples: usize,
    pub cotlap_distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub mode: String,
    pub converged: bool,
    pub trace: Vec<f64>,
    pub breakdown: Breakdown,
    pub coefficients: Option<Vec<f64>>,
    /// c rows of control offsets.
    pub offsets: Vec<[f64; 3]>,
    pub degenerate_faces: Vec<usize>,
    pub metrics: FitMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverReport {
    pub targets: Vec<String>,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    pub fit_losses: Vec<Breakdown>,
    pub trace: Vec<f64>,
    pub reconstruction: f64,
    pub sparsity: f64,
    pub covariance: f64,
    pub orthogonality: f64,
    pub svd: f64,
    pub random_rows: Vec<usize>,
    pub initial_ranges: Vec<[f64; 2]>,
    pub ranges: Vec<[f64; 2]>,
    pub tau_geo: f64,
    pub mean_losses: Vec<f64>,
    pub shrink_rounds: usize,
    /// One row per kept target.
    pub coefficients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub file: String,
    pub seed: u64,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub coverage: f64,
    pub mmd: f64,
    pub generated: Vec<String>,
    pub reference: Vec<String>,
    /// Row per generated shape, column per reference shape.
    pub table: Vec<Vec<f64>>,
    pub skipped: Vec<Skipped>,
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("record serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}
