//! JSON run configuration shared by the fit, predict and validate stages.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::empowerment::IndexConfig;
use crate::error::{Error, Result};
use crate::latent::{FieldHyper, HyperPriorSpec, IslandMode};
use crate::model::InterceptMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub intercept: InterceptMode,
    /// Prior variance of every intercept.
    pub alpha_variance: f64,
    pub island_mode: IslandMode,
    /// Hyperprior shared by the four fields.
    pub hyperprior: HyperPriorSpec,
    /// Holds `(rho, tau)` of every field fixed instead of sampling them.
    pub fixed_hyper: Option<FieldHyper>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            intercept: InterceptMode::PerCell,
            alpha_variance: 1000.0,
            island_mode: IslandMode::Independent,
            hyperprior: HyperPriorSpec::default(),
            fixed_hyper: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub thin: usize,
    pub seed: u64,
    /// Acceptance rate the hyperparameter proposals are tuned towards during warmup.
    pub target_acceptance: f64,
    /// Metropolis updates of each field's hyperparameters per sweep. The
    /// likelihood terms are fixed within a sweep, so extra steps are cheap.
    pub hyper_steps: usize,
    /// Draws are flagged as non-converged when any split R-hat exceeds this.
    pub rhat_threshold: f64,
    /// Keeps every Pólya-Gamma auxiliary at its initial value. Only useful as a
    /// deliberately broken sampler for calibration checks.
    pub freeze_auxiliary: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            thin: 1,
            seed: 1,
            target_acceptance: 0.3,
            hyper_steps: 5,
            rhat_threshold: 1.05,
            freeze_auxiliary: false,
        }
    }
}

/// Choropleth bin edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    /// Sequential scale for coverage probabilities; spans `[0, 1]`.
    pub pi_bins: Vec<f64>,
    /// Diverging scale for effects, symmetric around zero.
    pub gamma_bins: Vec<f64>,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            pi_bins: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            gamma_bins: vec![-1.5, -1.0, -0.5, -0.1, 0.1, 0.5, 1.0, 1.5],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub index: IndexConfig,
    pub maps: MapConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Schema(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |msg: String| Err(Error::Schema(msg));
        if !(self.model.alpha_variance > 0.0) {
            return schema(format!("model.alpha_variance must be positive, got {}", self.model.alpha_variance));
        }
        self.model.hyperprior.validate().map_err(|e| Error::Schema(format!("model.hyperprior: {e}")))?;
        if let Some(h) = self.model.fixed_hyper {
            FieldHyper::new(h.rho, h.tau).map_err(|e| Error::Schema(format!("model.fixed_hyper: {e}")))?;
        }
        let s = &self.sampler;
        if s.chains == 0 || s.draws == 0 || s.thin == 0 || s.hyper_steps == 0 {
            return schema("sampler.chains, sampler.draws, sampler.thin and sampler.hyper_steps must be at least 1".into());
        }
        if !(s.target_acceptance > 0.0 && s.target_acceptance < 1.0) {
            return schema(format!("sampler.target_acceptance must lie in (0, 1), got {}", s.target_acceptance));
        }
        if !(s.rhat_threshold >= 1.0) {
            return schema(format!("sampler.rhat_threshold must be at least 1, got {}", s.rhat_threshold));
        }
        for (name, b) in [("index.dm_boundaries", self.index.dm_boundaries), ("index.hc_boundaries", self.index.hc_boundaries)] {
            if let Some([lo, hi]) = b {
                if !(lo <= hi) {
                    return schema(format!("{name} must be increasing, got [{lo}, {hi}]"));
                }
            }
        }
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.maps.pi_bins) || self.maps.pi_bins[0] < 0.0 || *self.maps.pi_bins.last().unwrap() > 1.0 {
            return schema("maps.pi_bins must be at least two increasing edges within [0, 1]".into());
        }
        if !increasing(&self.maps.gamma_bins) {
            return schema("maps.gamma_bins must be at least two increasing edges".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

/// SHA-256 of the compact JSON serialization of `value`, hex encoded.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> String {
    let canonical = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&canonical))
}
