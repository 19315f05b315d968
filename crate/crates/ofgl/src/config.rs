//! Strict JSON configuration of a federation run.
//!
//! A single JSON file configures everything; unknown keys are rejected
//! with the offending key named, and command-line overrides address
//! fields by dotted paths (`stats.prop_depth=2`). Every run writes its
//! resolved configuration next to the outputs.

use crate::error::{Error, Result};
use crate::gnn::{KlDirection, ModelSpec, TrainConfig};
use crate::personalize::Ablation;
use crate::secure::{DenominatorMode, FixedPointCodec};
use crate::stats::{HreConfig, StatsConfig};
use crate::surrogate::GenConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Whether the protocol runs at all, or every client trains alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// The one-shot protocol: statistics, aggregation, surrogate,
    /// two-stage personalization.
    OneShot,
    /// Local supervised training only; the baseline.
    Standalone,
}

/// Where the surrogate graph is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// The server optimizes the surrogate and distributes the bundle.
    ServerGen,
    /// The server broadcasts pooled statistics; each client generates the
    /// surrogate locally (numerically identical when seeds match).
    ClientGen,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    /// Dataset bundle directory.
    pub dataset: String,
    pub num_clients: usize,
    /// Master seed; per-stage and per-client seeds derive from it.
    pub seed: u64,
    /// Repeat the run for each seed and report mean/std; empty means
    /// `[seed]`.
    pub seeds: Vec<u64>,
    /// Worker threads for the client fan-out; 0 uses all cores.
    pub threads: usize,
    pub pipeline: Pipeline,
    pub mode: GenerationMode,
    pub ablation: Ablation,
    pub stats: StatsConfig,
    pub hre: HreConfig,
    pub codec: FixedPointCodec,
    pub denominator: DenominatorMode,
    #[serde(rename = "gen")]
    pub generation: GenConfig,
    /// Model used by every client unless `client_models` is set.
    pub model: ModelSpec,
    /// Per-client model specs (heterogeneity); length must equal
    /// `num_clients`.
    pub client_models: Option<Vec<ModelSpec>>,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    /// Distillation weight scale.
    pub beta: f64,
    pub kl_direction: KlDirection,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            dataset: String::new(),
            num_clients: 1,
            seed: 0,
            seeds: Vec::new(),
            threads: 0,
            pipeline: Pipeline::OneShot,
            mode: GenerationMode::ServerGen,
            ablation: Ablation::Full,
            stats: StatsConfig::default(),
            hre: HreConfig::default(),
            codec: FixedPointCodec::default(),
            denominator: DenominatorMode::Paper,
            generation: GenConfig::default(),
            model: ModelSpec::Gcn2 { hidden: 64 },
            client_models: None,
            stage1: TrainConfig::default(),
            stage2: TrainConfig::default(),
            beta: 0.5,
            kl_direction: KlDirection::TeacherReference,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be >= 1".into()));
        }
        self.stats.validate()?;
        self.generation.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.stats.prop_depth != self.generation.prop_depth {
            return Err(Error::Config(format!(
                "stats.prop_depth ({}) must equal gen.prop_depth ({})",
                self.stats.prop_depth, self.generation.prop_depth
            )));
        }
        if self.beta <= 0.0 {
            return Err(Error::Config("beta must be > 0".into()));
        }
        if let Some(models) = &self.client_models {
            if models.len() != self.num_clients {
                return Err(Error::Config(format!(
                    "client_models has {} entries for {} clients",
                    models.len(),
                    self.num_clients
                )));
            }
        }
        self.codec.validate(self.num_clients)?;
        Ok(())
    }

    /// Seeds of the repeated runs.
    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Model spec of one client.
    pub fn model_for(&self, client_id: usize) -> ModelSpec {
        match &self.client_models {
            Some(models) => models[client_id],
            None => self.model,
        }
    }

    /// Parse a JSON value strictly; unknown keys are named in the error.
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: FederationConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Apply a dotted-path override (`stats.prop_depth=2`) onto a JSON value.
///
/// The raw text parses as JSON when possible, falling back to a string;
/// typos in the path surface later as strict-parsing errors.
pub fn apply_override(root: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(_) => serde_json::Value::String(raw.to_string()),
    };
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if segment.is_empty() {
            return Err(Error::Config(format!("empty segment in override '{path}'")));
        }
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}' crosses a non-object")))?;
        if i + 1 == segments.len() {
            map.insert((*segment).to_string(), parsed);
            return Ok(());
        }
        cursor = map
            .entry((*segment).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("override paths have at least one segment")
}

/// Parse overrides of the form `key.path=value`.
pub fn parse_override(spec: &str) -> Result<(&str, &str)> {
    spec.split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        FederationConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let err = FederationConfig::from_json(r#"{"lerning_rate": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "{err}");
    }

    #[test]
    fn nested_unknown_key_is_named() {
        let err =
            FederationConfig::from_json(r#"{"stats": {"prop_dpeth": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("prop_dpeth"), "{err}");
    }

    #[test]
    fn ablation_forms_parse() {
        let cfg = FederationConfig::from_json(r#"{"ablation": "ft_only"}"#).unwrap();
        assert_eq!(cfg.ablation, Ablation::FtOnly);
        let cfg = FederationConfig::from_json(r#"{"ablation": {"fixed_gamma": 0.4}}"#).unwrap();
        assert_eq!(cfg.ablation, Ablation::FixedGamma(0.4));
    }

    #[test]
    fn depth_mismatch_rejected() {
        let err = FederationConfig::from_json(
            r#"{"stats": {"prop_depth": 2}, "gen": {"prop_depth": 1}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("prop_depth"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut value = FederationConfig::default().to_value();
        apply_override(&mut value, "stats.prop_depth", "2").unwrap();
        apply_override(&mut value, "gen.prop_depth", "2").unwrap();
        apply_override(&mut value, "dataset", "some/dir").unwrap();
        let cfg = FederationConfig::from_value(value).unwrap();
        assert_eq!(cfg.stats.prop_depth, 2);
        assert_eq!(cfg.dataset, "some/dir");
    }

    #[test]
    fn override_with_bad_leaf_key_is_rejected_downstream() {
        let mut value = FederationConfig::default().to_value();
        apply_override(&mut value, "stats.prop_dpeth", "2").unwrap();
        let err = FederationConfig::from_value(value).unwrap_err();
        assert!(err.to_string().contains("prop_dpeth"));
    }

    #[test]
    fn heterogeneous_models_parse_and_validate_length() {
        let cfg = FederationConfig::from_json(
            r#"{
                "num_clients": 2,
                "client_models": [
                    {"arch": "gcn2", "hidden": 32},
                    {"arch": "sgc", "power": 2}
                ]
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.model_for(1), ModelSpec::Sgc { power: 2 });

        let err = FederationConfig::from_json(
            r#"{"num_clients": 3, "client_models": [{"arch": "sgc", "power": 2}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("client_models"));
    }
}
