//! Run configuration (JSON).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flowinfer_core::nn::{Activation, Architecture};
use flowinfer_core::synthetic::{CorruptionSpec, WorldSpec};
use flowinfer_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::UsageError;

pub const CONFIG_VERSION: u32 = 1;

/// Shape of the estimator apart from the covariate width, which follows the
/// dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub latent_dim: usize,
    pub hidden_width: usize,
    /// Linear layers including the output layer.
    pub depth: usize,
    pub activation: Activation,
    pub celu_alpha: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { latent_dim: 100, hidden_width: 60, depth: 7, activation: Activation::Tanh, celu_alpha: -12.0 }
    }
}

impl NetworkConfig {
    pub fn architecture(&self, covariate_dim: usize) -> Architecture {
        Architecture {
            covariate_dim,
            latent_dim: self.latent_dim,
            hidden_width: self.hidden_width,
            depth: self.depth,
            hidden_activation: self.activation,
            celu_alpha: self.celu_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub members: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { members: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    /// Initial-stock draws per member.
    pub samples: usize,
    /// Shift each member's initial stocks to fit the observed series.
    pub calibrate: bool,
    /// Draw initial stocks with accounting-based uncertainty; otherwise
    /// every draw equals the mean.
    pub stock_uncertainty: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { samples: 100, calibrate: true, stock_uncertainty: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ElasticityConfig {
    /// Evaluate this many (edge, year) points; all when absent.
    pub sample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Years per comparison window (and spacing of the stock tables used).
    pub window: usize,
    /// Reference flows in the truth schema; defaults to the dataset's truth.
    pub reference: Option<PathBuf>,
    /// Flow export of `estimate` to compare as the neural method.
    pub estimate: Option<PathBuf>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { window: 5, reference: None, estimate: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub latent_dims: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            depths: vec![3],
            widths: vec![20],
            activations: vec![Activation::Tanh],
            latent_dims: vec![5],
            lambdas: vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
        }
    }
}

/// All parameters of every command. The top-level `seed` drives every random
/// choice; seeds nested in `train` and `corruption` are overwritten with
/// values derived from it and recorded that way in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Dataset directory read by every command except `synth` and `sweep`.
    pub data: Option<PathBuf>,
    /// Directory of checkpoints written by `train` or `ensemble`.
    pub model: Option<PathBuf>,
    pub world: WorldSpec,
    pub corruption: CorruptionSpec,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub estimate: EstimateConfig,
    pub elasticity: ElasticityConfig,
    pub baseline: BaselineConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            data: None,
            model: None,
            world: WorldSpec::default(),
            corruption: CorruptionSpec::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            estimate: EstimateConfig::default(),
            elasticity: ElasticityConfig::default(),
            baseline: BaselineConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a config file, or the `config` of a run manifest.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| UsageError(format!("invalid JSON: {e}")))?;
        if value.get("manifest_version").is_some() {
            value = value.get("config").cloned().ok_or_else(|| UsageError("manifest has no config".into()))?;
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| UsageError(format!("invalid config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(UsageError(format!("config version {} is not supported (expected {CONFIG_VERSION})", cfg.version)).into());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        crate::output::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| UsageError("no dataset given (--data or \"data\")".into()).into())
    }

    pub fn model_dir(&self) -> Result<&Path> {
        self.model.as_deref().ok_or_else(|| UsageError("no model given (--model or \"model\")".into()).into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epoch": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"network": {"activation": "gelu"}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"version": 2}"#).is_err());
    }

    #[test]
    fn manifest_config_is_accepted() {
        let c = RunConfig { seed: 9, ..RunConfig::default() };
        let wrapped = serde_json::json!({"manifest_version": 1, "config": c});
        assert_eq!(RunConfig::from_json(&wrapped.to_string()).unwrap(), c);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..RunConfig::default() };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
