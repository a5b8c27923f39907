//! Run configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ErrorMode, FilterRules, MeasurementError};
use crate::error::{Error, Result};
use crate::gp::{GpConfig, Optimizer};
use crate::inference::LikelihoodMode;
use crate::modular_bayes::PriorSpec;
use crate::toymodel::ToySpec;
use crate::tsa::TsaConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Test CSV; when absent a synthetic corpus is generated from `[toy]`.
    pub path: Option<PathBuf>,
    pub design_vars: Option<usize>,
    /// Apply the void-fraction correction to every output.
    pub correct: bool,
    pub filter: bool,
    /// Output indices from lowest to highest elevation; defaults to file order.
    pub elevation_order: Option<Vec<usize>>,
    pub ordering_tol: f64,
    pub outlier_k: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let rules = FilterRules::default();
        Self {
            path: None,
            design_vars: None,
            correct: false,
            filter: true,
            elevation_order: None,
            ordering_tol: rules.ordering_tol,
            outlier_k: rules.outlier_k,
        }
    }
}

impl DataSection {
    pub fn filter_rules(&self) -> FilterRules {
        FilterRules {
            ordering_tol: self.ordering_tol,
            outlier_k: self.outlier_k,
        }
    }
}

/// Settings for the simulator emulator and its validation gate.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpCodeSection {
    pub n_design: usize,
    pub holdout_fraction: f64,
    pub q2_threshold: f64,
    pub nugget: f64,
    pub n_starts: usize,
    pub lengthscale_bounds: (f64, f64),
    pub optimizer: Optimizer,
    pub max_iter: usize,
}

impl Default for GpCodeSection {
    fn default() -> Self {
        let gp = GpConfig::default();
        Self {
            n_design: 20,
            holdout_fraction: 0.25,
            q2_threshold: 0.95,
            nugget: gp.nugget,
            n_starts: gp.n_starts,
            lengthscale_bounds: gp.lengthscale_bounds,
            optimizer: gp.optimizer,
            max_iter: gp.max_iter,
        }
    }
}

impl GpCodeSection {
    pub fn gp_config(&self) -> GpConfig {
        GpConfig {
            nugget: self.nugget,
            n_starts: self.n_starts,
            lengthscale_bounds: self.lengthscale_bounds,
            optimizer: self.optimizer,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodSection {
    pub mode: LikelihoodMode,
    pub error_mode: ErrorMode,
    pub rel_meas_error: f64,
    pub std_floor: f64,
    pub per_qoi: Option<Vec<f64>>,
    /// Evaluate the emulator variance once at the nominal parameters.
    pub freeze_code_variance: bool,
}

impl Default for LikelihoodSection {
    fn default() -> Self {
        let e = MeasurementError::default();
        Self {
            mode: LikelihoodMode::WithBias,
            error_mode: e.mode,
            rel_meas_error: e.rel,
            std_floor: e.std_floor,
            per_qoi: None,
            freeze_code_variance: false,
        }
    }
}

impl LikelihoodSection {
    pub fn measurement_error(&self) -> MeasurementError {
        MeasurementError {
            mode: self.error_mode,
            rel: self.rel_meas_error,
            std_floor: self.std_floor,
            per_qoi: self.per_qoi.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Falls back to the top-level seed.
    pub seed: Option<u64>,
    pub warmup: usize,
    /// Warm-up proposal std as a fraction of each prior range.
    pub init_scale: f64,
}

impl Default for McmcSection {
    fn default() -> Self {
        Self {
            n_samples: 50_000,
            burn_in: 10_000,
            thin: 10,
            seed: None,
            warmup: 1_000,
            init_scale: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatorKind {
    #[default]
    Toy,
    /// Precomputed runs looked up by exact input match.
    Table,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSection {
    pub kind: SimulatorKind,
    pub table: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub tsa: TsaConfig,
    /// Discrepancy emulator.
    pub gp: GpConfig,
    pub gpcode: GpCodeSection,
    pub likelihood: LikelihoodSection,
    pub mcmc: McmcSection,
    pub prior: PriorSpec,
    pub toy: ToySpec,
    pub simulator: SimulatorSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataSection::default(),
            tsa: TsaConfig::default(),
            gp: GpConfig::default(),
            gpcode: GpCodeSection::default(),
            likelihood: LikelihoodSection::default(),
            mcmc: McmcSection::default(),
            prior: PriorSpec::default(),
            toy: ToySpec::default(),
            simulator: SimulatorSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.path, &mut cfg.simulator.table].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).unwrap_or_default();
        hex::encode(Sha256::digest(canon.as_bytes()))
    }

    pub fn mcmc_seed(&self) -> u64 {
        self.mcmc.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.tsa.validate()?;
        self.prior.validate()?;
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.likelihood.rel_meas_error > 0.0) {
            return cfg(format!("rel_meas_error must be positive, got {}", self.likelihood.rel_meas_error));
        }
        if !(self.likelihood.std_floor >= 0.0) {
            return cfg("std_floor must be nonnegative".into());
        }
        let m = &self.mcmc;
        if m.n_samples <= m.burn_in {
            return cfg(format!("n_samples ({}) must exceed burn_in ({})", m.n_samples, m.burn_in));
        }
        if m.thin == 0 {
            return cfg("thin must be at least 1".into());
        }
        if m.n_samples < 1000 {
            return cfg("n_samples must be at least 1000".into());
        }
        if !(m.init_scale > 0.0) {
            return cfg("init_scale must be positive".into());
        }
        let g = &self.gpcode;
        if g.n_design < 2 {
            return cfg("n_design must be at least 2".into());
        }
        if !(g.holdout_fraction > 0.0 && g.holdout_fraction <= 1.0) {
            return cfg("holdout_fraction must lie in (0, 1]".into());
        }
        if !(g.q2_threshold <= 1.0) {
            return cfg("q2_threshold must not exceed 1".into());
        }
        for (name, gp) in [("gp", self.gp.clone()), ("gpcode", g.gp_config())] {
            if !(gp.nugget >= 0.0) || gp.n_starts == 0 {
                return cfg(format!("[{name}] needs nugget >= 0 and n_starts >= 1"));
            }
            let (lo, hi) = gp.lengthscale_bounds;
            if !(lo > 0.0 && lo < hi) {
                return cfg(format!("[{name}] lengthscale bounds must satisfy 0 < lower < upper"));
            }
        }
        if self.data.path.is_none() {
            self.toy.validate(&self.prior)?;
        }
        if self.simulator.kind == SimulatorKind::Table && self.simulator.table.is_none() {
            return cfg("simulator kind `table` needs a `table` path".into());
        }
        Ok(())
    }
}
