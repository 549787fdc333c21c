//! Co-separation training: two clips are mixed, a ratio mask is predicted
//! for every tagged object in either clip, and the only mask-level
//! supervision is that each clip's own masks must sum to that clip's
//! ratio mask inside the mixture. An auxiliary consistency loss asks a
//! shared classifier to recognize each separated spectrogram as its
//! conditioning class.

mod infer;
mod pair;
mod step;
mod trainer;

pub use infer::{denoise, infer_clip, infer_masks, top_detected_class};
pub use pair::{crop_samples, make_pair, ClipAudio, ObjectRef, TrainingPair, SILENT_RMS};
pub use step::{consistency_loss, cosep_loss, BatchLosses, BatchOutput};
pub use trainer::{RunSummary, StepRecord, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::dsp::DspError;
use crate::sepnet::SepnetError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum CotrainError {
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("sample rate mismatch between clips: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("clip '{clip_id}' too short: {len} samples < {need}-sample window")]
    ClipTooShort { clip_id: String, len: usize, need: usize },
    #[error("clip '{clip_id}': {attempts} crops in a row under rms {threshold:e}")]
    SilentClip { clip_id: String, attempts: usize, threshold: f64 },
    #[error("clip '{clip_id}' has no tagged objects")]
    NoObjects { clip_id: String },
    #[error(
        "non-finite loss at step {step} on pairs [{pair_ids}]: \
         cosep={cosep}, consistency={consistency}"
    )]
    NonFiniteLoss { step: u64, pair_ids: String, cosep: f64, consistency: f64 },
    #[error("training needs at least 2 clips, got {0}")]
    NotEnoughClips(usize),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Sepnet(#[from] SepnetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which loss terms drive the parameter update. The reduced modes exist
/// for ablations; `Full` optimizes cosep + lambda * consistency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    CosepOnly,
    ConsistencyOnly,
    Full,
}

/// Training hyperparameters. The conditioner's reduced learning rate is
/// not a field here: it is carried by the embedding table's `lr_scale`
/// inside the model (see `SepnetConfig::cond_lr_scale`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_pairs: usize,
    pub steps: usize,
    pub seed: u64,
    pub use_adaptable: bool,
    pub loss_mode: LossMode,
    /// Checkpoint every this many steps when a run directory is given;
    /// 0 disables periodic checkpoints (the final one is always written).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.05,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_pairs: 8,
            steps: 500,
            seed: 0,
            use_adaptable: true,
            loss_mode: LossMode::Full,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CotrainError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(CotrainError::BadConfig(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CotrainError::BadConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(CotrainError::BadConfig(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_pairs == 0 {
            return Err(CotrainError::BadConfig("batch_pairs must be >= 1".into()));
        }
        Ok(())
    }
}
