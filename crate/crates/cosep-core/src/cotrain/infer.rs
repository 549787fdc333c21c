//! Whole-clip inference: a training-sized window slides across the warped
//! spectrogram with quarter-window hop, per-object masks are predicted in
//! eval mode, overlapping frames are averaged uniformly, and each track is
//! reconstructed against the mixture phase.

use crate::corpus::Detection;
use crate::dsp::{
    self, log_warp, stft, ComplexSpectrogram, FreqAxis, Grid, RatioMask, Waveform, DEFAULT_HOP,
    DEFAULT_WINDOW,
};
use crate::sepnet::{Conditioning, SepModel};
use crate::tensor::{Graph, GraphParams, Tensor};

use super::pair::crop_samples;
use super::CotrainError;

/// Predict one warped-axis mask per requested class over the whole clip,
/// along with the padded mixture spectrogram the masks apply to. The clip
/// tail is zero-padded to a full STFT frame; windows advance by a quarter
/// of the training input length, with the final window clamped to the end.
pub fn infer_masks(
    model: &mut SepModel,
    mixture: &Waveform,
    classes: &[usize],
) -> Result<(Vec<RatioMask>, ComplexSpectrogram), CotrainError> {
    let s = model.config.spec_size;
    if classes.is_empty() || classes.len() > model.config.n_classes {
        return Err(CotrainError::BadConfig(format!(
            "need between 1 and {} conditioning classes, got {}",
            model.config.n_classes,
            classes.len()
        )));
    }
    let need = crop_samples(s);
    if mixture.len() < need {
        return Err(CotrainError::ClipTooShort {
            clip_id: "input".into(),
            len: mixture.len(),
            need,
        });
    }
    let frames = (mixture.len() - DEFAULT_WINDOW).div_ceil(DEFAULT_HOP) + 1;
    let padded_len = (frames - 1) * DEFAULT_HOP + DEFAULT_WINDOW;
    let mut samples = mixture.samples.clone();
    samples.resize(padded_len, 0.0);
    let padded = Waveform::new(samples, mixture.sample_rate)?;
    let spec = stft(&padded, DEFAULT_WINDOW, DEFAULT_HOP)?;
    let warped = log_warp(&spec.magnitude(), s)?;
    let t_total = warped.t();

    let hop_frames = (s / 4).max(1);
    let mut starts: Vec<usize> = (0..=t_total - s).step_by(hop_frames).collect();
    if *starts.last().expect("at least one window") != t_total - s {
        starts.push(t_total - s);
    }

    let n = classes.len();
    let px = s * s;
    let conds: Vec<Conditioning> = classes.iter().map(|&c| Conditioning::Class(c)).collect();
    let mut acc = vec![Grid::zeros(s, t_total); n];
    let mut coverage = vec![0.0; t_total];
    for &t0 in &starts {
        let mut window = vec![0.0; px];
        for r in 0..s {
            for c in 0..s {
                window[r * s + c] = warped.grid.at(r, t0 + c);
            }
        }
        let mut x_data = Vec::with_capacity(n * px);
        for _ in 0..n {
            x_data.extend_from_slice(&window);
        }
        let mut g = Graph::new();
        let mut gp = GraphParams::new();
        let x = g.constant(Tensor::new(vec![n, 1, s, s], x_data)?);
        let cond = model.condition_batch(&mut g, &mut gp, &conds)?;
        let masks = model.separate_batch(&mut g, &mut gp, x, cond, false)?;
        let mv = g.value(masks).data();
        for (i, grid) in acc.iter_mut().enumerate() {
            for r in 0..s {
                for c in 0..s {
                    *grid.at_mut(r, t0 + c) += mv[(i * s + r) * s + c];
                }
            }
        }
        for c in 0..s {
            coverage[t0 + c] += 1.0;
        }
    }
    for grid in &mut acc {
        for r in 0..s {
            for c in 0..t_total {
                *grid.at_mut(r, c) /= coverage[c];
            }
        }
    }
    let masks =
        acc.into_iter().map(|grid| RatioMask { grid, axis: FreqAxis::LogWarped }).collect();
    Ok((masks, spec))
}

/// Separate a clip into one track per requested class. Tracks match the
/// input length exactly.
pub fn infer_clip(
    model: &mut SepModel,
    mixture: &Waveform,
    classes: &[usize],
) -> Result<Vec<Waveform>, CotrainError> {
    let (masks, spec) = infer_masks(model, mixture, classes)?;
    let mut tracks = Vec::with_capacity(masks.len());
    for m in &masks {
        let full = dsp::reconstruct(m, &spec)?;
        let mut samples = full.samples;
        samples.truncate(mixture.len());
        tracks.push(Waveform::new(samples, mixture.sample_rate)?);
    }
    Ok(tracks)
}

/// Keep only the track conditioned on the clip's dominant object class.
/// With a model trained using the adaptable slot, untagged noise routes to
/// the adaptable mask and is discarded here.
pub fn denoise(
    model: &mut SepModel,
    mixture: &Waveform,
    top_class: usize,
) -> Result<Waveform, CotrainError> {
    let mut tracks = infer_clip(model, mixture, &[top_class])?;
    Ok(tracks.remove(0))
}

/// Class of the highest-confidence detection; ties keep the earliest.
pub fn top_detected_class(detections: &[Detection]) -> Option<usize> {
    let mut best: Option<&Detection> = None;
    for d in detections {
        if best.map_or(true, |b| d.confidence > b.confidence) {
            best = Some(d);
        }
    }
    best.map(|d| d.class_id)
}
