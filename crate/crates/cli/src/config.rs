//! Experiment configuration. Every field has a default, so a config file only
//! needs the values it changes; reports echo the fully resolved config.

use distgp_core::kernel::ParamBounds;
use distgp_core::ot::DEFAULT_LAMBDA;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub dim: usize,
    /// Number of fixed test measures the Gram matrices are built on.
    pub n_measures: usize,
    pub population: usize,
    pub sizes: Vec<usize>,
    /// Subsamples averaged per size.
    pub replicates: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            n_measures: 10,
            population: 2000,
            sizes: vec![20, 80, 160, 320],
            replicates: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub n_inputs: usize,
    pub n_train: usize,
    /// Grid used by the smoothing baseline and the grid-path variant.
    pub grid_size: usize,
    pub lambda: f64,
    /// Embed through rasterized densities instead of the exact Gaussian maps.
    pub grid_path: bool,
    /// Replace every response by this value.
    pub constant_response: Option<f64>,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            n_inputs: 100,
            n_train: 50,
            grid_size: 50,
            lambda: DEFAULT_LAMBDA,
            grid_path: false,
            constant_response: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdConfig {
    pub n_points: usize,
    pub dim: usize,
    /// Eigenvalues below `-naive_tol * λ_max` count as negative for the naive kernel.
    pub naive_tol: f64,
    /// PSD tolerance for the embedding kernel.
    pub embedding_tol: f64,
}

impl Default for PsdConfig {
    fn default() -> Self {
        Self {
            n_points: 100,
            dim: 2,
            naive_tol: 1e-6,
            embedding_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisksConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub disks: usize,
    pub radius: f64,
    pub grid_size: usize,
    pub lambda: f64,
    /// Make the first test configuration a copy of the first training one.
    pub duplicate_first: bool,
}

impl Default for DisksConfig {
    fn default() -> Self {
        Self {
            n_train: 40,
            n_test: 20,
            disks: 10,
            radius: 0.05,
            grid_size: 50,
            lambda: DEFAULT_LAMBDA,
            duplicate_first: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub bounds: ParamBounds,
    pub consistency: ConsistencyConfig,
    pub regression: RegressionConfig,
    pub psd: PsdConfig,
    pub disks: DisksConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            bounds: ParamBounds::default(),
            consistency: ConsistencyConfig::default(),
            regression: RegressionConfig::default(),
            psd: PsdConfig::default(),
            disks: DisksConfig::default(),
        }
    }
}

fn positive(name: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::Config(format!("{name} must be at least 1")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.bounds.validate()?;
        let c = &self.consistency;
        positive("consistency.dim", c.dim)?;
        positive("consistency.n_measures", c.n_measures)?;
        positive("consistency.replicates", c.replicates)?;
        if c.sizes.is_empty() || c.sizes.iter().any(|&n| n == 0 || n > c.population) {
            return Err(CliError::Config("consistency.sizes must lie in 1..=population".into()));
        }
        if c.n_measures > c.population {
            return Err(CliError::Config("consistency.n_measures exceeds the population".into()));
        }
        let r = &self.regression;
        positive("regression.grid_size", r.grid_size)?;
        if r.n_train < 4 || r.n_train >= r.n_inputs {
            return Err(CliError::Config("regression.n_train must be in 4..n_inputs".into()));
        }
        let p = &self.psd;
        positive("psd.n_points", p.n_points)?;
        positive("psd.dim", p.dim)?;
        let d = &self.disks;
        positive("disks.n_test", d.n_test)?;
        positive("disks.disks", d.disks)?;
        positive("disks.grid_size", d.grid_size)?;
        if d.n_train < 4 {
            return Err(CliError::Config("disks.n_train must be at least 4".into()));
        }
        if !(d.radius > 0.0 && d.radius < 0.5) {
            return Err(CliError::Config("disks.radius must be in (0, 0.5)".into()));
        }
        for lambda in [r.lambda, d.lambda] {
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(CliError::Config("lambda must be positive".into()));
            }
        }
        Ok(())
    }
}
