use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expand::{GateDirection, ThresholdRule};
use crate::metrics::DifficultyWeights;
use crate::policy::{clip_seed, ObservationNoise, PretrainConfig};
use crate::refine::{RefineConfig, RefineMode};
use crate::world::{ScenarioKind, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_clips: usize,
    pub test_clips: usize,
    /// Scenario kinds, assigned round-robin.
    pub kinds: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_clips: 2000,
            test_clips: 400,
            kinds: ScenarioKind::ALL.iter().map(|k| k.name().to_string()).collect(),
        }
    }
}

impl DataConfig {
    pub fn scenario_kinds(&self) -> Result<Vec<ScenarioKind>> {
        if self.kinds.is_empty() {
            return Err(Error::Config("data.kinds must not be empty".into()));
        }
        self.kinds
            .iter()
            .map(|k| ScenarioKind::parse(k).map_err(|_| Error::Config(format!("data.kinds: unknown scenario kind `{k}`"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSettings {
    pub noise: ObservationNoise,
    /// Temperature of the soft expert target, m.
    pub target_tau: f64,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            noise: ObservationNoise::default(),
            target_tau: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden layer widths; the last one is the embedding width d.
    pub hidden: Vec<usize>,
    /// Vocabulary size M.
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![256, 256],
            vocab_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub dropout: f64,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        let d = PretrainConfig::default();
        PretrainSettings {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            alpha: d.alpha,
            dropout: d.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocateConfig {
    /// Percentage of the training set taken as hard cases.
    pub epsilon: f64,
    /// Training clips sampled alongside each hard clip.
    pub anchors: usize,
    pub beta_per: f64,
    pub beta_ent: f64,
}

impl Default for AllocateConfig {
    fn default() -> Self {
        let w = DifficultyWeights::default();
        AllocateConfig {
            epsilon: 1.0,
            anchors: 3,
            beta_per: w.per,
            beta_ent: w.ent,
        }
    }
}

impl AllocateConfig {
    pub fn weights(&self) -> DifficultyWeights {
        DifficultyWeights {
            per: self.beta_per,
            ent: self.beta_ent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub members: usize,
    pub rank: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig { members: 6, rank: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSettings {
    pub lambda: f64,
    pub alpha_pretrain: f64,
    pub cost_budget: f64,
    pub is_clamp: (f64, f64),
    pub gamma: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Step size when refining the planning head directly (no adapters).
    pub full_learning_rate: f64,
    pub group_baseline: bool,
    pub mode: RefineMode,
}

impl Default for RefineSettings {
    fn default() -> Self {
        let d = RefineConfig::default();
        RefineSettings {
            lambda: d.lambda,
            alpha_pretrain: d.alpha_pretrain,
            cost_budget: d.cost_budget,
            is_clamp: d.is_clamp,
            gamma: d.gamma,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            full_learning_rate: d.learning_rate,
            group_baseline: d.group_baseline,
            mode: d.mode,
        }
    }
}

impl RefineSettings {
    pub fn to_config(&self, seed: u64) -> RefineConfig {
        RefineConfig {
            lambda: self.lambda,
            alpha_pretrain: self.alpha_pretrain,
            cost_budget: self.cost_budget,
            is_clamp: self.is_clamp,
            gamma: self.gamma,
            epochs: self.epochs,
            learning_rate: match self.mode {
                RefineMode::Adapters => self.learning_rate,
                RefineMode::Full => self.full_learning_rate,
            },
            group_baseline: self.group_baseline,
            reward_scale: 1.0,
            mode: self.mode,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    /// Expansion confidence σ.
    pub sigma: f64,
    pub direction: GateDirection,
    pub threshold: ThresholdRule,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            sigma: 0.75,
            direction: GateDirection::default(),
            threshold: ThresholdRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Minimum PDMS change counted as an extreme shift on a hard clip.
    pub delta_h: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { delta_h: 0.1 }
    }
}

/// Complete configuration of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub features: FeatureSettings,
    pub model: ModelConfig,
    pub pretrain: PretrainSettings,
    pub allocate: AllocateConfig,
    pub adapters: AdapterConfig,
    pub refine: RefineSettings,
    pub gate: GateConfig,
    pub eval: EvalConfig,
}

/// Purposes for which seeds are derived from the master seed.
pub const SEED_STREAMS: [&str; 9] = [
    "train_data",
    "test_data",
    "vocabulary",
    "init",
    "pretrain",
    "observation_noise",
    "rl_set",
    "adapters",
    "refine",
];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// A small configuration that runs the whole pipeline in seconds.
    pub fn desk() -> Self {
        let mut c = RunConfig::default();
        c.apply_desk_overrides();
        c
    }

    /// Hyperparameters used for the desk-scale experiment: a larger step size
    /// and more epochs than the large-scale defaults, and a wider hard-case
    /// percentile so the tail fit has enough samples.
    pub fn apply_desk_overrides(&mut self) {
        self.seed = 7;
        self.pretrain.epochs = 60;
        self.pretrain.learning_rate = 0.05;
        self.allocate.epsilon = 5.0;
        self.refine.epochs = 30;
        self.refine.learning_rate = 0.3;
        self.refine.is_clamp = (0.5, 2.0);
        self.refine.full_learning_rate = 0.05;
    }

    pub fn seed_for(&self, stream: &str) -> u64 {
        clip_seed(self.seed, stream)
    }

    pub fn derived_seeds(&self) -> BTreeMap<String, u64> {
        SEED_STREAMS.iter().map(|s| (s.to_string(), self.seed_for(s))).collect()
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            learning_rate: self.pretrain.learning_rate,
            alpha: self.pretrain.alpha,
            dropout: self.pretrain.dropout,
            seed: self.seed_for("pretrain"),
        }
    }

    pub fn refine_config(&self) -> RefineConfig {
        self.refine.to_config(self.seed_for("refine"))
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.data.scenario_kinds()?;
        if self.data.train_clips == 0 || self.data.test_clips == 0 {
            return Err(Error::Config("data.train_clips and data.test_clips must be positive".into()));
        }
        self.features.noise.validate()?;
        if !(self.features.target_tau > 0.0) {
            return Err(Error::Config("features.target_tau must be positive".into()));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden needs at least one positive width".into()));
        }
        if self.model.vocab_size < 2 {
            return Err(Error::Config("model.vocab_size must be at least 2".into()));
        }
        if self.model.vocab_size > self.data.train_clips {
            return Err(Error::Config("model.vocab_size exceeds data.train_clips".into()));
        }
        self.pretrain_config().validate()?;
        let a = &self.allocate;
        if !(a.epsilon > 0.0 && a.epsilon < 100.0) {
            return Err(Error::Config(format!("allocate.epsilon must lie in (0, 100), got {}", a.epsilon)));
        }
        if a.anchors >= self.data.train_clips {
            return Err(Error::Config("allocate.anchors must be smaller than data.train_clips".into()));
        }
        if !(a.beta_per >= 0.0 && a.beta_ent >= 0.0) {
            return Err(Error::Config("allocate.beta_per and beta_ent must be non-negative".into()));
        }
        if self.adapters.members == 0 {
            return Err(Error::Config("adapters.members must be positive".into()));
        }
        let d = *self.model.hidden.last().expect("checked non-empty");
        if self.adapters.rank == 0 || self.adapters.rank > d.min(self.model.vocab_size) {
            return Err(Error::Config(format!(
                "adapters.rank must lie in [1, {}]",
                d.min(self.model.vocab_size)
            )));
        }
        self.refine_config().validate()?;
        if !(self.refine.full_learning_rate >= 0.0) {
            return Err(Error::Config("refine.full_learning_rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.gate.sigma) {
            return Err(Error::Config(format!("gate.sigma must lie in [0, 1], got {}", self.gate.sigma)));
        }
        if !(self.eval.delta_h > 0.0) {
            return Err(Error::Config("eval.delta_h must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"sede": 3}"#), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"refine": {"lamda": 1}}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_kind_names_the_key() {
        let err = RunConfig::from_json(r#"{"data": {"kinds": ["lead_brake", "merge"]}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("data.kinds") && msg.contains("merge"), "{msg}");
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 11, "gate": {"sigma": 0.5}}"#).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.gate.sigma, 0.5);
        assert_eq!(c.adapters.members, 6);
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"gate": {"sigma": 1.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"allocate": {"epsilon": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"refine": {"is_clamp": [2.0, 3.0]}}"#).is_err());
    }
}
