//! Flat JSON run configuration shared by every subcommand.
//!
//! Defaults are desk-scale. Paper-scale values are noted next to each field.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::enhancer::{FinetuneConfig, PretrainConfig};
use crate::ranker::{RankerArch, RankerTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteSource {
    Simulated,
    Service,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Low-light training inputs X (PNG directory); synthetic when unset.
    pub train_dir: Option<PathBuf>,
    /// Normal-light images Y used as the pristine corpus; synthetic when unset.
    pub normal_dir: Option<PathBuf>,
    /// Held-out low-light inputs for evaluation; synthetic when unset.
    pub validation_dir: Option<PathBuf>,
    pub synthetic_size: usize,
    pub synthetic_train: usize,
    pub synthetic_normal: usize,
    pub synthetic_validation: usize,
    pub seed: u64,

    /// Curve iterations T (paper-scale enhancer: a diffusion network).
    pub curve_iterations: usize,
    /// Spatial grid G of curve parameters.
    pub curve_grid: usize,
    pub exposure_target: f64,
    pub exposure_patch: usize,
    pub color_weight: f64,
    pub pretrain_lr: f64,
    pub pretrain_iters: usize,
    pub pretrain_batch: usize,
    pub checkpoint_interval: usize,

    /// Ranker loss weight (paper scale: 0.1).
    pub lambda_r: f64,
    /// Paper scale: 1e-5.
    pub finetune_lr: f64,
    /// Paper scale: 10000.
    pub finetune_iters: usize,
    /// Paper scale: 2.
    pub finetune_batch: usize,
    pub content_levels: usize,

    /// Paper scale: 9 blocks.
    pub ranker_blocks: usize,
    pub ranker_base_ch: usize,
    pub ranker_hidden: usize,
    pub ranker_slope: f64,
    /// Margin ε of the ranking loss.
    pub margin: f64,
    /// Paper scale: 1e-5.
    pub ranker_lr: f64,
    /// Paper scale: 5000.
    pub ranker_iters: usize,
    /// Paper scale: 8.
    pub ranker_batch: usize,
    pub ranker_weight_decay: f64,
    pub ranker_halve_every: usize,
    /// Iterations for the NIQE-labelled initial ranker.
    pub bootstrap_ranker_iters: usize,
    /// Learning-rate halving period of the initial ranker; unset means a third
    /// of its iterations (paper scale: every 20000).
    pub bootstrap_halve_every: Option<usize>,
    /// Fraction of training inputs whose NIQE pairs are held out from the
    /// initial ranker and used to report its accuracy.
    pub bootstrap_holdout: f64,
    pub niqe_patch: usize,
    pub niqe_sharpness_quantile: f64,

    /// Total stages N (paper scale: 5).
    pub stages: u32,
    /// Pairs selected for annotation per stage (paper scale: 300).
    pub top_k: usize,
    /// Start each stage's ranker from the previous stage's ranker instead of the initial one.
    pub warm_start: bool,
    pub vote_source: VoteSource,
    /// Votes per pair (paper scale: 3).
    pub annotators: usize,
    /// Judgement noise of each simulated annotator.
    pub annotator_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_dir: None,
            normal_dir: None,
            validation_dir: None,
            synthetic_size: 64,
            synthetic_train: 64,
            synthetic_normal: 32,
            synthetic_validation: 32,
            seed: 0,
            curve_iterations: 4,
            curve_grid: 1,
            exposure_target: 0.6,
            exposure_patch: 16,
            color_weight: 0.5,
            pretrain_lr: 0.005,
            pretrain_iters: 60,
            pretrain_batch: 8,
            checkpoint_interval: 10,
            lambda_r: 0.1,
            finetune_lr: 0.01,
            finetune_iters: 1000,
            finetune_batch: 2,
            content_levels: 3,
            ranker_blocks: 4,
            ranker_base_ch: 16,
            ranker_hidden: 64,
            ranker_slope: 0.2,
            margin: 0.5,
            ranker_lr: 1e-3,
            ranker_iters: 500,
            ranker_batch: 8,
            ranker_weight_decay: 1e-4,
            ranker_halve_every: 0,
            bootstrap_ranker_iters: 500,
            bootstrap_halve_every: None,
            bootstrap_holdout: 0.25,
            niqe_patch: 32,
            niqe_sharpness_quantile: 0.75,
            stages: 3,
            top_k: 16,
            warm_start: true,
            vote_source: VoteSource::Simulated,
            annotators: 3,
            annotator_noise: 0.02,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid config values: {}", .0.iter().map(|(k, r)| format!("{k} ({r})")).collect::<Vec<_>>().join(", "))]
    Invalid(Vec<(String, String)>),
    #[error("config is not a JSON object")]
    NotObject,
    #[error("bad override {0:?}, expected key=value")]
    BadOverride(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ConfigError {
    /// Every key named by the error.
    pub fn keys(&self) -> Vec<&str> {
        match self {
            ConfigError::UnknownKeys(k) => k.iter().map(String::as_str).collect(),
            ConfigError::Invalid(v) => v.iter().map(|(k, _)| k.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

fn known_keys() -> BTreeSet<String> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => unreachable!("RunConfig serializes to an object"),
    }
}

impl RunConfig {
    /// Parses a JSON object, rejecting unknown keys and invalid values.
    /// Missing keys take their defaults.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        let Value::Object(map) = value else {
            return Err(ConfigError::NotObject);
        };
        let known = known_keys();
        let unknown: Vec<String> = map.keys().filter(|k| !known.contains(*k)).cloned().collect();
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        let config: RunConfig = serde_json::from_value(Value::Object(map))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Applies `key=value` overrides; values parse as JSON, falling back to a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let Value::Object(mut map) = serde_json::to_value(self)? else {
            return Err(ConfigError::NotObject);
        };
        let mut extra = Map::new();
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.to_string()))?;
            let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            extra.insert(k.trim().to_string(), v);
        }
        map.extend(extra);
        Self::from_value(Value::Object(map))
    }

    /// Checks value ranges, reporting every offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut bad: Vec<(String, String)> = Vec::new();
        let mut check = |ok: bool, key: &str, reason: &str| {
            if !ok {
                bad.push((key.to_string(), reason.to_string()));
            }
        };
        let min_side = self.ranker_arch().min_side().max(crate::bootstrap::MIN_SCORED_SIDE);
        check(self.synthetic_size >= min_side, "synthetic_size", &format!("must be at least {min_side}"));
        check(self.synthetic_train >= 1, "synthetic_train", "must be positive");
        check(self.synthetic_normal >= 10, "synthetic_normal", "must be at least 10");
        check(self.synthetic_validation >= 1, "synthetic_validation", "must be positive");
        check(self.curve_iterations >= 1, "curve_iterations", "must be positive");
        check(self.curve_grid >= 1, "curve_grid", "must be positive");
        check(
            self.exposure_target > 0.0 && self.exposure_target < 1.0,
            "exposure_target",
            "must lie in (0, 1)",
        );
        check(self.exposure_patch >= 1, "exposure_patch", "must be positive");
        check(self.color_weight >= 0.0, "color_weight", "must be nonnegative");
        check(self.pretrain_lr > 0.0, "pretrain_lr", "must be positive");
        check(self.pretrain_batch >= 1, "pretrain_batch", "must be positive");
        check(
            self.checkpoint_interval >= 1 && self.pretrain_iters / self.checkpoint_interval >= 1,
            "checkpoint_interval",
            "must be positive and leave at least one intermediate",
        );
        check(self.lambda_r >= 0.0 && self.lambda_r.is_finite(), "lambda_r", "must be nonnegative");
        check(self.finetune_lr > 0.0, "finetune_lr", "must be positive");
        check(self.finetune_batch >= 1, "finetune_batch", "must be positive");
        check(self.content_levels >= 1, "content_levels", "must be positive");
        check(self.ranker_blocks >= 1, "ranker_blocks", "must be positive");
        check(self.ranker_base_ch >= 1, "ranker_base_ch", "must be positive");
        check(self.ranker_hidden >= 1, "ranker_hidden", "must be positive");
        check(self.ranker_slope >= 0.0 && self.ranker_slope < 1.0, "ranker_slope", "must lie in [0, 1)");
        check(self.margin >= 0.0, "margin", "must be nonnegative");
        check(self.ranker_lr > 0.0, "ranker_lr", "must be positive");
        check(self.ranker_batch >= 1, "ranker_batch", "must be positive");
        check(self.ranker_weight_decay >= 0.0, "ranker_weight_decay", "must be nonnegative");
        check(
            self.bootstrap_holdout >= 0.0 && self.bootstrap_holdout < 1.0,
            "bootstrap_holdout",
            "must lie in [0, 1)",
        );
        check(self.niqe_patch >= 8, "niqe_patch", "must be at least 8");
        check(
            (0.0..=1.0).contains(&self.niqe_sharpness_quantile),
            "niqe_sharpness_quantile",
            "must lie in [0, 1]",
        );
        check(self.stages >= 1, "stages", "must be positive");
        check(self.top_k >= 1, "top_k", "must be positive");
        check(
            self.annotators >= 3 && self.annotators % 2 == 1,
            "annotators",
            "must be odd and at least 3",
        );
        check(self.annotator_noise >= 0.0, "annotator_noise", "must be nonnegative");
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(bad))
        }
    }

    pub fn ranker_arch(&self) -> RankerArch {
        RankerArch {
            blocks: self.ranker_blocks,
            base_ch: self.ranker_base_ch,
            hidden: self.ranker_hidden,
            slope: self.ranker_slope,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            iterations: self.curve_iterations,
            grid: self.curve_grid,
            exposure_target: self.exposure_target,
            patch: self.exposure_patch,
            color_weight: self.color_weight,
            lr: self.pretrain_lr,
            iters: self.pretrain_iters,
            batch_size: self.pretrain_batch,
            checkpoint_interval: self.checkpoint_interval,
            seed: self.seed,
        }
    }

    /// Fine-tuning settings for the step that produces stage `stage`'s enhancer.
    pub fn finetune_config(&self, stage: u32) -> FinetuneConfig {
        FinetuneConfig {
            lambda_r: self.lambda_r,
            lr: self.finetune_lr,
            iters: self.finetune_iters,
            batch_size: self.finetune_batch,
            levels: self.content_levels,
            seed: self.seed ^ u64::from(stage),
        }
    }

    /// Ranker training settings for stage `stage` (0 is the NIQE-labelled ranker).
    pub fn ranker_train_config(&self, stage: u32) -> RankerTrainConfig {
        RankerTrainConfig {
            iters: if stage == 0 { self.bootstrap_ranker_iters } else { self.ranker_iters },
            batch_size: self.ranker_batch,
            lr: self.ranker_lr,
            weight_decay: self.ranker_weight_decay,
            margin: self.margin,
            halve_every: if stage == 0 {
                self.bootstrap_halve_every.unwrap_or(self.bootstrap_ranker_iters / 3)
            } else {
                self.ranker_halve_every
            },
            seed: self.seed ^ u64::from(stage),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn every_unknown_key_is_named() {
        let err = RunConfig::from_json(r#"{"top_k": 4, "topk": 3, "lamda_r": 0.1}"#).unwrap_err();
        assert_eq!(err.keys(), vec!["lamda_r", "topk"]);
        assert!(err.to_string().contains("topk"));
    }

    #[test]
    fn every_invalid_value_is_named() {
        let err = RunConfig::from_json(r#"{"annotators": 4, "top_k": 0, "stages": 2}"#).unwrap_err();
        assert_eq!(err.keys(), vec!["top_k", "annotators"]);
    }

    #[test]
    fn overrides_win_and_parse_json() {
        let c = RunConfig::default()
            .with_overrides(&["top_k=5", "vote_source=service", "train_dir=/tmp/x"])
            .unwrap();
        assert_eq!(c.top_k, 5);
        assert_eq!(c.vote_source, VoteSource::Service);
        assert_eq!(c.train_dir.as_deref(), Some(Path::new("/tmp/x")));
        assert!(matches!(
            RunConfig::default().with_overrides(&["nope=1"]),
            Err(ConfigError::UnknownKeys(_))
        ));
        assert!(matches!(
            RunConfig::default().with_overrides(&["top_k"]),
            Err(ConfigError::BadOverride(_))
        ));
    }

    #[test]
    fn paper_scale_values_are_valid() {
        let c = RunConfig::default()
            .with_overrides(&[
                "stages=5",
                "top_k=300",
                "ranker_blocks=9",
                "ranker_lr=1e-5",
                "finetune_lr=1e-5",
                "ranker_iters=5000",
                "finetune_iters=10000",
                "synthetic_size=64",
            ])
            .unwrap();
        c.validate().unwrap();
    }
}
