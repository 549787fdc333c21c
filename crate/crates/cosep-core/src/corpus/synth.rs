//! Additive note-based synthesis for instrument stems, pink-noise
//! backgrounds, and pure clip rendering (mixture = sum of stems).

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, SourceClass};
use crate::dsp::Waveform;

pub const DEFAULT_CLIP_SECS: f64 = 10.0;
/// Target RMS for every synthesized stem.
const STEM_RMS: f64 = 0.1;
/// Fade-out at the end of each note, seconds (click suppression).
const RELEASE_SECS: f64 = 0.01;

/// Render one instrument stem: a sequence of notes with random pitch
/// (within the class range), amplitude, and harmonic phases, shaped by an
/// attack/decay envelope and vibrato. Deterministic given (class, seed);
/// output RMS is normalized to exactly 0.1.
pub fn synth_source(
    class: &SourceClass,
    duration_secs: f64,
    sample_rate: u32,
    seed: u64,
) -> Waveform {
    assert!(duration_secs > 0.0, "duration must be positive");
    let sr = sample_rate as f64;
    let n = (duration_secs * sr).round() as usize;
    let mut out = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let nyquist_guard = 0.48 * sr;
    let mut t_cursor = 0.0;
    while t_cursor < duration_secs {
        let note_len = rng.gen_range(0.4..1.2);
        let gap = rng.gen_range(0.05..0.2);
        let (lo, hi) = class.fundamental_range;
        let f0 = rng.gen_range(lo..=hi);
        let note_amp = rng.gen_range(0.7..1.0);

        let start = (t_cursor * sr) as usize;
        let end = (((t_cursor + note_len) * sr) as usize).min(n);
        if start >= end {
            break;
        }
        let env: Vec<f64> = (0..end - start)
            .map(|i| {
                let t = i as f64 / sr;
                let attack = (t / class.attack.max(1e-4)).min(1.0);
                let decay = (-class.decay * (t - class.attack).max(0.0)).exp();
                let release = ((note_len - t) / RELEASE_SECS).clamp(0.0, 1.0);
                attack * decay * release
            })
            .collect();

        for (k, &h_amp) in class.harmonic_amplitudes.iter().enumerate() {
            let h = (k + 1) as f64;
            if h * f0 * (1.0 + class.vibrato_depth) > nyquist_guard {
                break;
            }
            if h_amp == 0.0 {
                continue;
            }
            let mut phase = rng.gen_range(0.0..TAU);
            for i in start..end {
                let t_abs = i as f64 / sr;
                let f_inst =
                    h * f0 * (1.0 + class.vibrato_depth * (TAU * class.vibrato_rate * t_abs).sin());
                phase += TAU * f_inst / sr;
                out[i] += note_amp * h_amp * env[i - start] * phase.sin();
            }
        }
        t_cursor += note_len + gap;
    }

    let rms = (out.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        let g = STEM_RMS / rms;
        for s in &mut out {
            *s *= g;
        }
    }
    Waveform::new(out, sample_rate).expect("synthesized samples are finite")
}

/// Pink (1/f) noise via the Kellet filter cascade, RMS-normalized to
/// `target_rms`.
pub fn pink_noise(n: usize, sample_rate: u32, target_rms: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = rng.gen_range(-1.0..1.0);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        out.push(b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362);
        b[6] = w * 0.115926;
    }
    let rms = (out.iter().map(|s| s * s).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = target_rms / rms;
        for s in &mut out {
            *s *= g;
        }
    }
    Waveform::new(out, sample_rate).expect("pink noise samples are finite")
}

/// A rendered clip: per-tag stems (class id set) plus an optional
/// background stem (class id `None`), and their exact sum as the mixture.
#[derive(Debug, Clone)]
pub struct RenderedClip {
    pub tags: Vec<usize>,
    pub stems: Vec<(Option<usize>, Waveform)>,
    pub mixture: Waveform,
}

/// Render a solo or duet clip. Stems are synthesized per tag (ascending
/// class id), an optional pink-noise background is added at
/// `background_snr_db` below the combined instrument power, and the
/// mixture is the elementwise sum. If the mixture peak exceeds 0.99 one
/// shared gain is applied to every stem and the mixture is re-summed, so
/// mixture == Σ stems holds exactly.
pub fn make_clip(
    classes: &[SourceClass],
    tags: &[usize],
    clip_secs: f64,
    sample_rate: u32,
    background_snr_db: Option<f64>,
    seed: u64,
) -> Result<RenderedClip, CorpusError> {
    if tags.is_empty() || tags.len() > 2 {
        return Err(CorpusError::BadTagCount(tags.len()));
    }
    let mut tags = tags.to_vec();
    tags.sort_unstable();
    if tags.len() == 2 && tags[0] == tags[1] {
        return Err(CorpusError::DuplicateTag(tags[0]));
    }
    for &t in &tags {
        if t >= classes.len() {
            return Err(CorpusError::UnknownClass { class_id: t, n_classes: classes.len() });
        }
    }

    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stems: Vec<(Option<usize>, Waveform)> = Vec::new();
    for &t in &tags {
        let stem_seed: u64 = seed_rng.gen();
        stems.push((Some(t), synth_source(&classes[t], clip_secs, sample_rate, stem_seed)));
    }
    let n = stems[0].1.samples.len();

    if let Some(snr_db) = background_snr_db {
        let sig_power: f64 = {
            let mut sum = vec![0.0; n];
            for (_, w) in &stems {
                for (acc, s) in sum.iter_mut().zip(&w.samples) {
                    *acc += *s;
                }
            }
            sum.iter().map(|s| s * s).sum::<f64>() / n as f64
        };
        let noise_rms = sig_power.sqrt() / 10f64.powf(snr_db / 20.0);
        let bg_seed: u64 = seed_rng.gen();
        stems.push((None, pink_noise(n, sample_rate, noise_rms, bg_seed)));
    }

    let sum_stems = |stems: &[(Option<usize>, Waveform)]| -> Vec<f64> {
        let mut mix = vec![0.0; n];
        for (_, w) in stems {
            for (acc, s) in mix.iter_mut().zip(&w.samples) {
                *acc += *s;
            }
        }
        mix
    };

    let mut mixture = sum_stems(&stems);
    let peak = mixture.iter().fold(0.0f64, |p, s| p.max(s.abs()));
    if peak > 0.99 {
        let g = 0.99 / peak;
        for (_, w) in &mut stems {
            for s in &mut w.samples {
                *s *= g;
            }
        }
        mixture = sum_stems(&stems);
    }

    let mixture = Waveform::new(mixture, sample_rate)?;
    Ok(RenderedClip { tags, stems, mixture })
}

/// Snap a waveform to the 16-bit PCM grid (the same transform the WAV
/// writer applies), so sums of quantized stems survive disk round trips
/// exactly.
pub(crate) fn quantize_pcm16(w: &mut Waveform) {
    for s in &mut w.samples {
        *s = (*s * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_classes;
    use crate::dsp::{stft, DEFAULT_HOP, DEFAULT_SAMPLE_RATE, DEFAULT_WINDOW};

    #[test]
    fn synth_is_deterministic() {
        let classes = default_classes();
        let a = synth_source(&classes[1], 2.0, DEFAULT_SAMPLE_RATE, 42);
        let b = synth_source(&classes[1], 2.0, DEFAULT_SAMPLE_RATE, 42);
        assert_eq!(a.samples, b.samples);
        let c = synth_source(&classes[1], 2.0, DEFAULT_SAMPLE_RATE, 43);
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn synth_rms_is_normalized() {
        for class in &default_classes() {
            let w = synth_source(class, 3.0, DEFAULT_SAMPLE_RATE, 9);
            assert!((w.rms() - 0.1).abs() < 0.01, "{}: rms {}", class.name, w.rms());
        }
    }

    #[test]
    fn fixed_fundamental_puts_peaks_at_harmonics() {
        // Degenerate class pinned at 220 Hz with vibrato off, so each
        // harmonic stays within one DFT bin of 220k Hz.
        let class = SourceClass {
            id: 0,
            name: "test220".into(),
            fundamental_range: (220.0, 220.0),
            harmonic_amplitudes: vec![1.0, 0.6, 0.4, 0.25],
            attack: 0.02,
            decay: 0.1,
            vibrato_rate: 0.0,
            vibrato_depth: 0.0,
        };
        let w = synth_source(&class, 4.0, DEFAULT_SAMPLE_RATE, 5);
        let spec = stft(&w, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        let mag = spec.magnitude();
        // Average magnitude across frames.
        let profile: Vec<f64> =
            (0..mag.f()).map(|fi| (0..mag.t()).map(|ti| mag.grid.at(fi, ti)).sum()).collect();
        let hz_per_bin = DEFAULT_SAMPLE_RATE as f64 / DEFAULT_WINDOW as f64;
        for k in 1..=4 {
            let expect = (220.0 * k as f64 / hz_per_bin).round() as usize;
            let lo = expect - 3;
            let hi = expect + 3;
            let local_peak = (lo..=hi).max_by(|a, b| profile[*a].total_cmp(&profile[*b])).unwrap();
            assert!(
                local_peak.abs_diff(expect) <= 1,
                "harmonic {k}: peak bin {local_peak}, expected {expect}"
            );
        }
    }

    #[test]
    fn class_spectral_envelopes_are_dissimilar() {
        // Normalized spectral-envelope cosine similarity must stay below
        // 0.9 for every class pair (same seed).
        let classes = default_classes();
        let envelopes: Vec<Vec<f64>> = classes
            .iter()
            .map(|c| {
                let w = synth_source(c, 4.0, DEFAULT_SAMPLE_RATE, 11);
                let mag = stft(&w, DEFAULT_WINDOW, DEFAULT_HOP).unwrap().magnitude();
                let mut env: Vec<f64> = (0..mag.f())
                    .map(|fi| (0..mag.t()).map(|ti| mag.grid.at(fi, ti)).sum())
                    .collect();
                let norm = env.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in &mut env {
                    *x /= norm;
                }
                env
            })
            .collect();
        let mut max_cos = 0.0f64;
        for i in 0..classes.len() {
            for j in i + 1..classes.len() {
                let cos: f64 = envelopes[i].iter().zip(&envelopes[j]).map(|(a, b)| a * b).sum();
                max_cos = max_cos.max(cos);
                assert!(cos < 0.9, "{} vs {}: cosine {cos}", classes[i].name, classes[j].name);
            }
        }
        // Measured ceiling across default classes: 0.395 (shawm vs
        // flute). Guard against regressions that would make timbres
        // collapse together.
        assert!(max_cos < 0.6, "max pairwise cosine rose to {max_cos}");
    }

    #[test]
    fn solo_clip_mixture_equals_stem() {
        let classes = default_classes();
        let clip = make_clip(&classes, &[2], 2.0, DEFAULT_SAMPLE_RATE, None, 3).unwrap();
        assert_eq!(clip.stems.len(), 1);
        assert_eq!(clip.mixture.samples, clip.stems[0].1.samples);
    }

    #[test]
    fn duet_mixture_is_sum_of_stems() {
        let classes = default_classes();
        let clip = make_clip(&classes, &[4, 1], 2.0, DEFAULT_SAMPLE_RATE, Some(20.0), 3).unwrap();
        assert_eq!(clip.tags, vec![1, 4]);
        assert_eq!(clip.stems.len(), 3); // two instruments + background
        for i in 0..clip.mixture.samples.len() {
            let sum: f64 = clip.stems.iter().map(|(_, w)| w.samples[i]).sum();
            assert!((clip.mixture.samples[i] - sum).abs() < 1e-9);
        }
        let peak = clip.mixture.samples.iter().fold(0.0f64, |p, s| p.max(s.abs()));
        assert!(peak <= 0.99 + 1e-12);
    }

    #[test]
    fn bad_tag_sets_are_rejected() {
        let classes = default_classes();
        assert!(matches!(
            make_clip(&classes, &[], 2.0, DEFAULT_SAMPLE_RATE, None, 0),
            Err(CorpusError::BadTagCount(0))
        ));
        assert!(matches!(
            make_clip(&classes, &[1, 1], 2.0, DEFAULT_SAMPLE_RATE, None, 0),
            Err(CorpusError::DuplicateTag(1))
        ));
        assert!(matches!(
            make_clip(&classes, &[9], 2.0, DEFAULT_SAMPLE_RATE, None, 0),
            Err(CorpusError::UnknownClass { class_id: 9, .. })
        ));
    }

    #[test]
    fn pink_noise_slopes_down_with_frequency() {
        let w = pink_noise(44100, DEFAULT_SAMPLE_RATE, 0.1, 17);
        assert!((w.rms() - 0.1).abs() < 1e-9);
        let mag = stft(&w, DEFAULT_WINDOW, DEFAULT_HOP).unwrap().magnitude();
        let band_power = |lo: usize, hi: usize| -> f64 {
            let mut p = 0.0;
            for fi in lo..hi {
                for ti in 0..mag.t() {
                    p += mag.grid.at(fi, ti).powi(2);
                }
            }
            p / (hi - lo) as f64
        };
        let low = band_power(4, 32);
        let high = band_power(256, 480);
        assert!(low > 4.0 * high, "pink noise not low-heavy: low {low}, high {high}");
    }
}
