//! Experiment configuration: one JSON file per experiment.
//!
//! Every field except `task` and `policy` has a default, so a minimal config
//! is just a model, a dataset source, and a policy. Unknown keys are
//! rejected to catch typos.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compression::{CompressionPolicy, PolicyKind};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::protocol::DownloadAccounting;
use crate::schedule::TauSchedule;

/// Where the training data comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian class blobs sized to the model's feature/class counts.
    Synthetic {
        n_samples: usize,
        class_separation: f64,
    },
    /// `f0,...,fN,label` CSV on disk.
    Csv { path: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub model: ModelSpec,
    pub dataset: DatasetConfig,
}

/// Compression technique and hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub rate: f64,
    #[serde(default = "default_momentum")]
    pub alpha: f64,
    #[serde(default = "default_momentum")]
    pub beta: f64,
}

impl PolicyConfig {
    pub fn build(&self) -> Result<CompressionPolicy> {
        CompressionPolicy::new(self.kind, self.rate, self.alpha, self.beta)
    }
}

/// Optional step decay: `eta * factor^(round / every_rounds)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaDecay {
    pub every_rounds: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    #[serde(default = "default_n_clients")]
    pub n_clients: usize,
    #[serde(default = "default_n_rounds")]
    pub n_rounds: usize,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub tau_schedule: TauSchedule,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub eta_decay: Option<EtaDecay>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub target_emd: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub download_accounting: DownloadAccounting,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

fn default_n_clients() -> usize {
    20
}

fn default_n_rounds() -> usize {
    220
}

fn default_momentum() -> f64 {
    0.9
}

fn default_eta() -> f64 {
    0.1
}

fn default_batch_size() -> usize {
    32
}

fn default_test_fraction() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let config_err = |msg: String| Err(Error::Config(msg));
        self.task
            .model
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let DatasetConfig::Synthetic {
            n_samples,
            class_separation,
        } = &self.task.dataset
        {
            if *n_samples == 0 {
                return config_err("synthetic dataset needs samples".into());
            }
            if !(class_separation.is_finite() && *class_separation >= 0.0) {
                return config_err("class_separation must be nonnegative".into());
            }
        }
        if self.n_clients == 0 {
            return config_err("n_clients must be positive".into());
        }
        if self.n_rounds == 0 {
            return config_err("n_rounds must be positive".into());
        }
        if self.batch_size == 0 {
            return config_err("batch_size must be positive".into());
        }
        self.policy
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.tau_schedule.validate()?;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return config_err(format!("eta must be positive, got {}", self.eta));
        }
        if let Some(decay) = &self.eta_decay {
            if decay.every_rounds == 0 {
                return config_err("eta_decay.every_rounds must be positive".into());
            }
            if !(decay.factor > 0.0 && decay.factor <= 1.0) {
                return config_err(format!(
                    "eta_decay.factor must be in (0, 1], got {}",
                    decay.factor
                ));
            }
        }
        if !(self.target_emd >= 0.0 && self.target_emd.is_finite()) {
            return config_err(format!(
                "target_emd must be nonnegative, got {}",
                self.target_emd
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return config_err(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            ));
        }
        Ok(())
    }

    /// Learning rate for a given round, after optional step decay.
    pub fn eta_at(&self, round: usize) -> f64 {
        match &self.eta_decay {
            None => self.eta,
            Some(decay) => self.eta * decay.factor.powi((round / decay.every_rounds) as i32),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "task": {
                "model": {"kind": "logreg", "n_features": 8, "n_classes": 3},
                "dataset": {"source": "synthetic", "n_samples": 600, "class_separation": 2.0}
            },
            "policy": {"kind": "dgcwgmf", "rate": 0.1}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(cfg.n_clients, 20);
        assert_eq!(cfg.n_rounds, 220);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.eta, 0.1);
        assert_eq!(cfg.policy.alpha, 0.9);
        assert_eq!(cfg.policy.beta, 0.9);
        assert_eq!(cfg.tau_schedule, TauSchedule::default());
        assert_eq!(cfg.test_fraction, 0.1);
        assert_eq!(cfg.download_accounting, DownloadAccounting::PerClient);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = minimal_json().replace("\"seed\"", "\"sead\"");
        // inject an unknown top-level key
        let bad = bad.replacen('{', "{\"bogus\": 1,", 1);
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        let mut cfg = ExperimentConfig::from_json(&minimal_json()).unwrap();
        cfg.eta = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::from_json(&minimal_json()).unwrap();
        cfg.policy.rate = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::from_json(&minimal_json()).unwrap();
        cfg.tau_schedule = TauSchedule {
            start: 0.9,
            end: 0.1,
            n_steps: 10,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::from_json(&minimal_json()).unwrap();
        cfg.test_fraction = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn eta_decay_steps_down() {
        let mut cfg = ExperimentConfig::from_json(&minimal_json()).unwrap();
        cfg.eta_decay = Some(EtaDecay {
            every_rounds: 10,
            factor: 0.5,
        });
        cfg.validate().unwrap();
        assert_eq!(cfg.eta_at(0), 0.1);
        assert_eq!(cfg.eta_at(9), 0.1);
        assert_eq!(cfg.eta_at(10), 0.05);
        assert_eq!(cfg.eta_at(25), 0.025);
    }

    #[test]
    fn csv_source_parses() {
        let json = r#"{
            "task": {
                "model": {"kind": "mlp1", "n_features": 4, "n_classes": 2, "hidden_units": 8},
                "dataset": {"source": "csv", "path": "data/train.csv"}
            },
            "policy": {"kind": "dgc", "rate": 0.25, "alpha": 0.5, "beta": 0.0},
            "n_clients": 4,
            "n_rounds": 10,
            "download_accounting": "multicast"
        }"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        assert!(matches!(cfg.task.dataset, DatasetConfig::Csv { .. }));
        assert_eq!(cfg.download_accounting, DownloadAccounting::Multicast);
        assert_eq!(cfg.policy.beta, 0.0);
    }
}
