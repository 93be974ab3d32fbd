//! Experiment configuration: one JSON document drives every subcommand.
//! Unknown keys are rejected, and a single experiment seed is fanned out
//! to the suite, pre-training, and per-task fine-tuning streams, so two
//! runs with the same document and seed touch identical randomness.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use tta_core::disentangle::GridSpec;
use tta_core::models::ModelSpec;
use tta_core::rng::child_seed;
use tta_core::taskvec::MixingConfig;
use tta_core::tasks::SuiteConfig;
use tta_core::training::{default_pretrain_config, TrainConfig};

use crate::ConfigError;

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// The on-disk document. Only `seed` is mandatory; every omitted section
/// falls back to the library defaults. Explicit `pretrain`/`finetune`
/// sections override hyperparameters, never seeds: seeds always derive
/// from the experiment seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub suite: SuiteConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    #[serde(default)]
    pub finetune: Option<TrainConfig>,
    #[serde(default)]
    pub mixing: MixingConfig,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            suite: SuiteConfig::default(),
            model: ModelSpec::default(),
            pretrain: None,
            finetune: None,
            mixing: MixingConfig::default(),
            grid: GridSpec::default(),
            output_dir: default_output_dir(),
        }
    }

    /// Load and parse a config document, reporting the JSON path of the
    /// offending field on failure.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| ConfigError(format!("{} at `{}`: {}", path.display(), e.path(), e.inner())))?;
        Ok(cfg)
    }

    /// Apply command-line overrides, fan the seed out, and validate every
    /// section. The result is what drivers and the manifest hash see.
    pub fn resolve(self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Resolved> {
        let seed = seed.unwrap_or(self.seed);
        let mut suite = self.suite;
        suite.seed = seed;
        let pretrain = match self.pretrain {
            Some(mut cfg) => {
                cfg.seed = child_seed(seed, "pretrain");
                cfg
            }
            None => default_pretrain_config(seed),
        };
        let mut finetune = self.finetune.unwrap_or_default();
        finetune.seed = child_seed(seed, "finetune");
        let resolved = Resolved {
            seed,
            suite,
            model: self.model,
            pretrain,
            finetune,
            mixing: self.mixing,
            grid: self.grid,
            output_dir: out.unwrap_or(self.output_dir),
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

/// A fully resolved run: overrides applied, seeds derived, everything
/// validated. `output_dir` is excluded from serialization so the manifest
/// hash identifies the experiment, not where its bytes land.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub suite: SuiteConfig,
    pub model: ModelSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub mixing: MixingConfig,
    pub grid: GridSpec,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Resolved {
    fn validate(&self) -> Result<()> {
        let sections: [(&str, tta_core::error::Result<()>); 6] = [
            ("suite", self.suite.validate()),
            ("model", self.model.validate()),
            ("pretrain", self.pretrain.validate()),
            ("finetune", self.finetune.validate()),
            ("mixing", self.mixing.validate()),
            ("grid", self.grid.validate()),
        ];
        for (name, check) in sections {
            if let Err(e) = check {
                return Err(ConfigError(format!("{name}: {e}")).into());
            }
        }
        if self.model.input_dim != self.suite.input_dim {
            return Err(ConfigError(format!(
                "model.input_dim {} does not match suite.input_dim {}",
                self.model.input_dim, self.suite.input_dim
            ))
            .into());
        }
        if self.model.num_classes != self.suite.num_classes {
            return Err(ConfigError(format!(
                "model.num_classes {} does not match suite.num_classes {}",
                self.model.num_classes, self.suite.num_classes
            ))
            .into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"seed": 1, "suite": {"num_tasks": 4, "points_per_task": 512, "input_dim": 2, "num_classes": 8, "classes_per_task": 2, "control_task_id": 3, "seed": 0, "bogus": 1}}"#).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("suite"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn missing_seed_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{}"#).unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }

    #[test]
    fn seed_override_fans_out_to_children() {
        let a = ExperimentConfig::default_with_seed(7).resolve(None, None).unwrap();
        let b = ExperimentConfig::default_with_seed(0).resolve(Some(7), None).unwrap();
        assert_eq!(a.suite.seed, 7);
        assert_eq!(a.pretrain.seed, b.pretrain.seed);
        assert_eq!(a.finetune.seed, b.finetune.seed);
        assert_ne!(a.pretrain.seed, a.finetune.seed);
    }

    #[test]
    fn mismatched_model_and_suite_dims_are_a_config_error() {
        let mut cfg = ExperimentConfig::default_with_seed(1);
        cfg.model.input_dim = 5;
        let err = cfg.resolve(None, None).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }
}
