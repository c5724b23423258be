//! Run configuration shared by every CLI command.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::CaolConfig;
use crate::denoiser::DEFAULT_SMOOTH_B;
use crate::error::{Error, Result};
use crate::sim::DatasetConfig;
use crate::solver::NetworkConfig;
use crate::train::TrainConfig;

/// The published JSON schema of [`RunConfig`].
pub const SCHEMA: &str = include_str!("../schema/run_config.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "k_f")]
    pub kf: usize,
    #[serde(rename = "T")]
    pub depth: usize,
    pub n_cg: usize,
    pub cg_tol: f64,
    pub smooth_b: f64,
    pub exact_threshold: bool,
    /// Seed of the uniform filter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 16,
            kf: 3,
            depth: 4,
            n_cg: 4,
            cg_tol: 0.0,
            smooth_b: DEFAULT_SMOOTH_B,
            exact_threshold: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            depth: self.depth,
            n_cg: self.n_cg,
            cg_tol: self.cg_tol,
            exact_threshold: self.exact_threshold,
        }
    }
}

/// Decoupled pretraining and the inference depth used with its filters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "k_f")]
    pub kf: usize,
    pub sparsity_alpha: Option<f64>,
    pub outer_iters: usize,
    pub seed: u64,
    #[serde(rename = "T_test")]
    pub test_depth: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let c = CaolConfig::default();
        Self {
            k: c.k,
            kf: c.kf,
            sparsity_alpha: c.sparsity_alpha,
            outer_iters: c.outer_iters,
            seed: 0,
            test_depth: 24,
        }
    }
}

impl PretrainConfig {
    pub fn caol(&self) -> CaolConfig {
        CaolConfig {
            k: self.k,
            kf: self.kf,
            sparsity_alpha: self.sparsity_alpha,
            outer_iters: self.outer_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub roi_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { roi_fraction: 0.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DatasetConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates `path`; `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) if !p.exists() => Err(Error::MissingInput(p.to_path_buf())),
            Some(p) => Self::from_json(&std::fs::read_to_string(p)?),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.data.validate().map_err(config)?;
        self.train.validate().map_err(config)?;
        self.pretrain.caol().validate().map_err(config)?;
        self.model.network().validate().map_err(config)?;
        let m = &self.model;
        if m.k == 0 || m.kf.is_multiple_of(2) {
            return Err(Error::Config(format!("need K >= 1 and odd k_f, got K={} k_f={}", m.k, m.kf)));
        }
        if !(m.smooth_b > 0.0) {
            return Err(Error::Config(format!("smooth_b must be positive, got {}", m.smooth_b)));
        }
        let f = self.eval.roi_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("roi_fraction must lie in (0, 1], got {f}")));
        }
        Ok(())
    }

    /// Canonical serialization with defaults filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
