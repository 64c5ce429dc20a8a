//! Layered run configuration: built-in defaults, then an optional config
//! file, then repeated `--set key=value` overrides, in that precedence
//! order.
//!
//! Values are stored as the raw strings they arrived as and only parsed
//! when a typed accessor asks for them. The manifest therefore echoes
//! every resolved key exactly as the user wrote it — `0.6570` stays
//! `0.6570` — which makes reruns byte-reproducible and configs auditable.

use std::collections::BTreeMap;
use std::path::Path;

use crate::analysis::FeatureStage;
use crate::dataio::SynthConfig;
use crate::error::{MwError, Result};
use crate::fusion::{FusionKind, GmuGate};
use crate::metrics::{BootstrapMetric, BootstrapSided};
use crate::model::{CheckpointFormat, ModelConfig};
use crate::train::{AdamwConfig, TrainConfig};

/// Every known key with its default value. Unknown keys are rejected
/// loudly instead of being silently ignored.
const REGISTRY: &[(&str, &str)] = &[
    // Architecture.
    ("h", "8"),
    ("fusion", "mfb"),
    ("imgr", "on"),
    ("adapter", "off"),
    ("gmu_gate", "visual"),
    // Training recipe.
    ("epochs", "3"),
    ("lr", "0.001"),
    ("weight_decay", "0.01"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("eps", "1e-8"),
    ("train_batch", "20"),
    ("infer_batch", "41"),
    ("threshold", "0.657"),
    ("seed", "42"),
    // Synthetic data generator.
    ("n_train", "2000"),
    ("n_val", "250"),
    ("n_test", "250"),
    ("positive_rate", "0.5"),
    ("mean_separation", "1.2"),
    ("noise", "1.0"),
    ("modality_dropout", "0.3"),
    // Significance testing.
    ("bootstrap_b", "1000"),
    ("bootstrap_metric", "macro_f1"),
    ("bootstrap_sided", "two"),
    // Gradient checking.
    ("grad_step", "1e-6"),
    ("grad_tol", "1e-4"),
    // Diagnostics.
    ("sweep_sizes", "1,2,4,8,16,32,64"),
    ("probe_folds", "5"),
    ("probe_stage", "refined"),
    ("pca_k", "2"),
    // Checkpoint output.
    ("checkpoint_format", "decimal"),
];

/// A fully resolved configuration; every registry key is present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: REGISTRY
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Config {
    /// Defaults, overridden by the config file (if given), overridden by
    /// the `--set key=value` pairs in order.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| MwError::io(path, e))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim_end_matches('\r').trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    MwError::Config(format!(
                        "{}:{}: expected key=value, got {line:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                cfg.set(key.trim(), value.trim())?;
            }
        }
        for item in sets {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                MwError::Config(format!("--set expects key=value, got {item:?}"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Overrides one key; unknown keys are a config error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(MwError::Config(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// The raw string a key resolved to.
    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key:?} missing from registry"))
            .as_str()
    }

    /// Every resolved key as `key=value`, sorted by key, values verbatim.
    pub fn manifest_lines(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse().map_err(|_| {
            MwError::Config(format!("config key {key}={raw:?} is not a valid {what}"))
        })
    }

    pub fn usize_of(&self, key: &str) -> Result<usize> {
        self.parse_as(key, "non-negative integer")
    }

    pub fn u64_of(&self, key: &str) -> Result<u64> {
        self.parse_as(key, "non-negative integer")
    }

    pub fn f64_of(&self, key: &str) -> Result<f64> {
        self.parse_as(key, "number")
    }

    /// `on`/`off` switch.
    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "on" => Ok(true),
            "off" => Ok(false),
            other => Err(MwError::Config(format!(
                "config key {key}={other:?} must be on or off"
            ))),
        }
    }

    /// Comma-separated positive integers (for the batch-size sweep).
    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.raw(key);
        raw.split(',')
            .map(|piece| {
                piece.trim().parse::<usize>().map_err(|_| {
                    MwError::Config(format!(
                        "config key {key}={raw:?} must be a comma-separated list of integers"
                    ))
                })
            })
            .collect()
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            h: self.usize_of("h")?,
            fusion: FusionKind::parse(self.raw("fusion"))?,
            imgr: self.flag("imgr")?,
            adapter: self.flag("adapter")?,
            gmu_gate: GmuGate::parse(self.raw("gmu_gate"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.usize_of("epochs")?,
            lr: self.f64_of("lr")?,
            adamw: AdamwConfig {
                beta1: self.f64_of("beta1")?,
                beta2: self.f64_of("beta2")?,
                eps: self.f64_of("eps")?,
                weight_decay: self.f64_of("weight_decay")?,
            },
            train_batch: self.usize_of("train_batch")?,
            infer_batch: self.usize_of("infer_batch")?,
            seed: self.u64_of("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            h: self.usize_of("h")?,
            n_train: self.usize_of("n_train")?,
            n_val: self.usize_of("n_val")?,
            n_test: self.usize_of("n_test")?,
            positive_rate: self.f64_of("positive_rate")?,
            mean_separation: self.f64_of("mean_separation")?,
            noise: self.f64_of("noise")?,
            modality_dropout: self.f64_of("modality_dropout")?,
            seed: self.u64_of("seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn threshold(&self) -> Result<f64> {
        let tau = self.f64_of("threshold")?;
        if !(tau > 0.0 && tau < 1.0) {
            return Err(MwError::Config(format!(
                "config key threshold={tau} must lie strictly inside (0, 1)"
            )));
        }
        Ok(tau)
    }

    pub fn bootstrap_metric(&self) -> Result<BootstrapMetric> {
        match self.raw("bootstrap_metric") {
            "accuracy" => Ok(BootstrapMetric::Accuracy),
            "macro_f1" => Ok(BootstrapMetric::MacroF1),
            other => Err(MwError::Config(format!(
                "config key bootstrap_metric={other:?} must be accuracy or macro_f1"
            ))),
        }
    }

    pub fn bootstrap_sided(&self) -> Result<BootstrapSided> {
        match self.raw("bootstrap_sided") {
            "one" => Ok(BootstrapSided::One),
            "two" => Ok(BootstrapSided::Two),
            other => Err(MwError::Config(format!(
                "config key bootstrap_sided={other:?} must be one or two"
            ))),
        }
    }

    pub fn probe_stage(&self) -> Result<FeatureStage> {
        FeatureStage::parse(self.raw("probe_stage"))
    }

    pub fn checkpoint_format(&self) -> Result<CheckpointFormat> {
        CheckpointFormat::parse(self.raw("checkpoint_format"))
    }
}
