//! Batch entry points tying the separation pipeline together: corpus
//! synthesis, training, evaluation, single-file separation, and the
//! loss-ablation runner. Everything is driven by one JSON experiment
//! config plus `--set key=value` overrides; outputs are WAV stems,
//! JSON/CSV metrics, and grayscale PNG spectrograms.

pub mod commands;
pub mod config;
pub mod pairs;
pub mod render;
pub mod sep;

use thiserror::Error;

pub use config::{ExperimentConfig, CONFIG_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("bad --set override '{key}': {reason}")]
    BadOverride { key: String, reason: String },
    #[error("empty corpus: config yields zero clips")]
    EmptyCorpus,
    #[error("corpus/config mismatch: corpus has {corpus} classes, model expects {model} (C+1)")]
    ClassMismatch { corpus: usize, model: usize },
    #[error("corpus validation failed, mixture != sum of stems for: {clip_ids}")]
    CorruptClips { clip_ids: String },
    #[error("unsupported sample rate {got} Hz: expected {want} Hz or an integer multiple")]
    UnsupportedSampleRate { got: u32, want: u32 },
    #[error("not enough held-out solo clips to build test pairs (need >= 2 distinct classes)")]
    NoTestPairs,
    #[error(transparent)]
    Corpus(#[from] cosep_core::corpus::CorpusError),
    #[error(transparent)]
    Cotrain(#[from] cosep_core::cotrain::CotrainError),
    #[error(transparent)]
    Sepnet(#[from] cosep_core::sepnet::SepnetError),
    #[error(transparent)]
    Bss(#[from] cosep_core::bsseval::BssError),
    #[error(transparent)]
    Dsp(#[from] cosep_core::dsp::DspError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
