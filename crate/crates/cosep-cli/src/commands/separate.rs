//! `cosep separate`: run a trained checkpoint on one mono WAV, writing a
//! stem per requested class plus the adaptable residual, and diagnostic
//! PNGs of the mixture spectrogram and every predicted mask.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cosep_core::cotrain::infer_masks;
use cosep_core::dsp::{
    read_wav, reconstruct, stft, write_wav, Waveform, DEFAULT_HOP, DEFAULT_SAMPLE_RATE,
    DEFAULT_WINDOW,
};
use cosep_core::sepnet::SepModel;

use crate::render::{render_mask, render_spectrogram};
use crate::sep::{reflect_pad, EDGE_PAD};
use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparateReport {
    /// One stem per requested class, in request order, then the residual.
    pub stems: Vec<PathBuf>,
    pub images: Vec<PathBuf>,
    pub sample_rate: u32,
    /// Stem length in samples (== the resampled input length).
    pub n_samples: usize,
}

/// Decimate by an integer factor with a boxcar mean per block (cheap
/// anti-aliasing; the pipeline is fixed at 11025 Hz).
fn resample_to(w: &Waveform, target: u32) -> Result<Waveform, CliError> {
    if w.sample_rate == target {
        return Ok(w.clone());
    }
    if w.sample_rate % target != 0 {
        return Err(CliError::UnsupportedSampleRate { got: w.sample_rate, want: target });
    }
    let k = (w.sample_rate / target) as usize;
    let samples: Vec<f64> =
        w.samples.chunks(k).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    Ok(Waveform::new(samples, target)?)
}

pub fn cmd_separate(
    checkpoint: &Path,
    wav_in: &Path,
    classes: &[usize],
    out_dir: &Path,
) -> Result<SeparateReport, CliError> {
    let mut model = SepModel::load(checkpoint)?;
    let n_real = model.config.n_classes - 1;
    let adaptable = model.config.adaptable_class();

    let mut requested: Vec<usize> = Vec::new();
    for &c in classes {
        if c >= n_real {
            return Err(CliError::Config(format!(
                "class id {c} out of range: model has classes 0..{n_real} plus the adaptable slot"
            )));
        }
        if !requested.contains(&c) {
            requested.push(c);
        }
    }
    if requested.is_empty() {
        requested = (0..n_real).collect();
    }

    let audio = resample_to(&read_wav(wav_in)?, DEFAULT_SAMPLE_RATE)?;
    let mut conds = requested.clone();
    conds.push(adaptable);
    // Analyse a reflect-padded copy so every output sample sits in the
    // fully overlapped STFT interior, then slice the padding back off.
    let pad = EDGE_PAD.min(audio.len().saturating_sub(1));
    let (masks, spec) = infer_masks(&mut model, &reflect_pad(&audio, pad), &conds)?;

    fs::create_dir_all(out_dir)?;
    let mut stems = Vec::new();
    let mut images = Vec::new();
    let spec_png = out_dir.join("mixture_spectrogram.png");
    render_spectrogram(&stft(&audio, DEFAULT_WINDOW, DEFAULT_HOP)?.magnitude(), &spec_png)?;
    images.push(spec_png);

    for (mask, &c) in masks.iter().zip(&conds) {
        let name = if c == adaptable { "adaptable".to_string() } else { format!("class{c}") };
        let track = reconstruct(mask, &spec)?.samples[pad..pad + audio.len()].to_vec();
        let stem = Waveform::new(track, audio.sample_rate)?;
        let wav_path = if c == adaptable {
            out_dir.join("residual_adaptable.wav")
        } else {
            out_dir.join(format!("stem_{name}.wav"))
        };
        write_wav(&wav_path, &stem)?;
        stems.push(wav_path);
        let mask_png = out_dir.join(format!("mask_{name}.png"));
        render_mask(mask, &mask_png)?;
        images.push(mask_png);
    }

    Ok(SeparateReport {
        stems,
        images,
        sample_rate: audio.sample_rate,
        n_samples: audio.len(),
    })
}
