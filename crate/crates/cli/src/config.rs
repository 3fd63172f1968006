//! Run configuration: one flat TOML table whose keys mirror the fields of
//! the fitting, discovery and loss-weight configs, plus `--set key=value`
//! overrides from the command line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use metaforge::discover::DiscoveryConfig;
use metaforge::fit::FitConfig;
use metaforge::losses::{ChamferVariant, LossWeights};
use metaforge::metrics::DENSE_SAMPLES;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Squared,
    Unsquared,
}

impl From<Variant> for ChamferVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Squared => ChamferVariant::Squared,
            Variant::Unsquared => ChamferVariant::Unsquared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Control points.
    pub c: usize,
    /// Points sampled per surface.
    pub p: usize,
    /// Meta-handles.
    pub m: usize,
    pub seed: u64,
    /// Rescale every loaded mesh into the unit sphere.
    pub normalize: bool,

    pub w_fit: f64,
    pub w_symm: f64,
    pub w_nor: f64,
    pub w_lap: f64,
    pub w_sp: f64,
    pub w_cov: f64,
    pub w_ortho: f64,
    pub w_svd: f64,
    pub chamfer_variant: Variant,

    pub max_outer_iterations: usize,
    pub inner_steps: usize,
    pub initial_step: f64,
    pub max_halvings: usize,
    pub tolerance: f64,

    pub iterations: usize,
    pub percentile_low: f64,
    pub percentile_high: f64,
    pub tau_geo: Option<f64>,
    pub range_samples: usize,
    pub shrink: f64,
    pub max_shrink_rounds: usize,
    pub cov_include_diagonal: bool,

    /// Samples per mesh for dense Chamfer in fit records.
    pub dense_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let f = FitConfig::default();
        let d = DiscoveryConfig::default();
        Self {
            c: 50,
            p: 4096,
            m: d.handle_count,
            seed: 0,
            normalize: true,
            w_fit: w.w_fit,
            w_symm: w.w_symm,
            w_nor: w.w_nor,
            w_lap: w.w_lap,
            w_sp: w.w_sp,
            w_cov: w.w_cov,
            w_ortho: w.w_ortho,
            w_svd: w.w_svd,
            chamfer_variant: Variant::Squared,
            max_outer_iterations: f.max_outer_iterations,
            inner_steps: f.inner_steps,
            initial_step: f.initial_step,
            max_halvings: f.max_halvings,
            tolerance: f.tolerance,
            iterations: d.iterations,
            percentile_low: d.percentiles.0,
            percentile_high: d.percentiles.1,
            tau_geo: d.tau_geo,
            range_samples: d.range_samples,
            shrink: d.shrink,
            max_shrink_rounds: d.max_shrink_rounds,
            cov_include_diagonal: d.cov_include_diagonal,
            dense_samples: DENSE_SAMPLES,
        }
    }
}

impl RunConfig {
    /// Reads `path` if given, applies `key=value` overrides, then `seed`.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(io_err(p))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {item:?} is not key=value")))?;
            let key = key.trim();
            let value = value.trim();
            // Bare words such as `unsquared` are taken as strings.
            let parsed = format!("v = {value}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(value.to_string()));
            table.insert(key.to_string(), parsed);
        }
        let mut config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        if let Some(s) = seed {
            config.seed = s;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            w_fit: self.w_fit,
            w_symm: self.w_symm,
            w_nor: self.w_nor,
            w_lap: self.w_lap,
            w_sp: self.w_sp,
            w_cov: self.w_cov,
            w_ortho: self.w_ortho,
            w_svd: self.w_svd,
        }
    }

    pub fn fit(&self) -> FitConfig {
        FitConfig {
            max_outer_iterations: self.max_outer_iterations,
            inner_steps: self.inner_steps,
            initial_step: self.initial_step,
            max_halvings: self.max_halvings,
            tolerance: self.tolerance,
            weights: self.weights(),
            chamfer_variant: self.chamfer_variant.into(),
            seed: self.seed,
        }
    }

    pub fn discovery(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            handle_count: self.m,
            weights: self.weights(),
            iterations: self.iterations,
            percentiles: (self.percentile_low, self.percentile_high),
            tau_geo: self.tau_geo,
            range_samples: self.range_samples,
            shrink: self.shrink,
            max_shrink_rounds: self.max_shrink_rounds,
            cov_include_diagonal: self.cov_include_diagonal,
            seed: self.seed,
            fit: self.fit(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.c == 0 {
            return bad("c must be at least 1");
        }
        if self.p == 0 {
            return bad("p must be at least 1");
        }
        if self.dense_samples == 0 {
            return bad("dense_samples must be at least 1");
        }
        self.fit().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.discovery().validate().map_err(|e| CliError::Config(e.to_string()))
    }

    /// Compact TOML of every value in effect, for bundle metadata.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
