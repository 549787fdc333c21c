//! One JSON document drives every command: corpus synthesis parameters,
//! network architecture, training hyperparameters, and evaluation
//! settings. `--set key=value` overrides patch the document before it is
//! parsed, so typos and unknown keys are rejected the same way either way.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use cosep_core::bsseval::DEFAULT_FILTER_LEN;
use cosep_core::corpus::CorpusConfig;
use cosep_core::cotrain::{crop_samples, TrainConfig};
use cosep_core::sepnet::SepnetConfig;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Evaluation and validation settings: the distortion-filter length for
/// bss_eval, how test pairs are drawn, and the cadence of in-training
/// validation probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Allowed distortion filter length L for bss_eval.
    pub filter_len: usize,
    /// Seed for subsampling the full test-pair grid.
    pub pairs_seed: u64,
    /// Keep at most this many test pairs; 0 keeps the whole grid.
    pub max_pairs: usize,
    /// Steps between validation-SDR probes during training; 0 disables.
    pub validate_every: usize,
    /// Pairs per validation probe.
    pub val_pairs: usize,
    /// Cheaper filter length for validation probes.
    pub val_filter_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            filter_len: DEFAULT_FILTER_LEN,
            pairs_seed: 77,
            max_pairs: 30,
            validate_every: 0,
            val_pairs: 4,
            val_filter_len: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub corpus: CorpusConfig,
    pub sepnet: SepnetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        let sepnet = SepnetConfig::desk(corpus.classes.len() + 1);
        ExperimentConfig {
            version: CONFIG_VERSION,
            corpus,
            sepnet,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} not supported (expected {})",
                self.version, CONFIG_VERSION
            )));
        }
        if self.corpus.classes.is_empty() {
            return Err(CliError::Config("corpus needs at least one class".into()));
        }
        if self.sepnet.n_classes != self.corpus.classes.len() + 1 {
            return Err(CliError::Config(format!(
                "sepnet.n_classes must be corpus classes + 1: got {} for {} classes",
                self.sepnet.n_classes,
                self.corpus.classes.len()
            )));
        }
        self.sepnet.validate()?;
        self.train.validate()?;
        let clip_len = (self.corpus.clip_secs * self.corpus.sample_rate as f64) as usize;
        if clip_len < crop_samples(self.sepnet.spec_size) {
            return Err(CliError::Config(format!(
                "clips of {} samples are shorter than one {}-frame training crop ({})",
                clip_len,
                self.sepnet.spec_size,
                crop_samples(self.sepnet.spec_size)
            )));
        }
        if self.eval.filter_len == 0 || self.eval.val_filter_len == 0 {
            return Err(CliError::Config("eval filter lengths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Load a config file (or start from defaults when `path` is None) and
/// patch it with `key.path=value` overrides before parsing, so override
/// typos fail exactly like unknown JSON keys.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut value: Value = match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => serde_json::to_value(ExperimentConfig::default())?,
    };
    for s in sets {
        apply_set(&mut value, s)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(value)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Apply one `dotted.path=value` override in place. The path must already
/// exist in the document; the value is parsed as JSON, falling back to a
/// bare string (so `train.loss_mode=cosep_only` works unquoted).
fn apply_set(root: &mut Value, set: &str) -> Result<(), CliError> {
    let bad = |reason: &str| CliError::BadOverride { key: set.to_string(), reason: reason.into() };
    let (key, raw) = set.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    if key.is_empty() {
        return Err(bad("empty key"));
    }
    let mut node = root;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| bad("path does not name an object"))?;
        match obj.get_mut(*seg) {
            Some(child) if i + 1 == segments.len() => {
                *child = serde_json::from_str(raw)
                    .unwrap_or_else(|_| Value::String(raw.to_string()));
                return Ok(());
            }
            Some(child) => node = child,
            None => return Err(bad("unknown key")),
        }
    }
    unreachable!("split('.') yields at least one segment");
}
