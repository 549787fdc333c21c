//! Short-time Fourier transform and its least-squares inverse.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{ComplexSpectrogram, DspError, Waveform};

pub const DEFAULT_WINDOW: usize = 1022;
pub const DEFAULT_HOP: usize = 256;

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// STFT with a periodic Hann window. Produces `window/2 + 1` frequency
/// rows (DC through Nyquist) by `(len - window)/hop + 1` frame columns;
/// trailing samples that do not fill a frame are dropped.
pub fn stft(w: &Waveform, window: usize, hop: usize) -> Result<ComplexSpectrogram, DspError> {
    if w.samples.len() < window {
        return Err(DspError::ShortInput { len: w.samples.len(), window });
    }
    let f = window / 2 + 1;
    let t = (w.samples.len() - window) / hop + 1;
    let win = hann_periodic(window);
    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut bins = vec![Complex::new(0.0, 0.0); f * t];
    let mut frame = vec![Complex::new(0.0, 0.0); window];
    for ti in 0..t {
        let start = ti * hop;
        for i in 0..window {
            frame[i] = Complex::new(w.samples[start + i] * win[i], 0.0);
        }
        fft.process(&mut frame);
        for fi in 0..f {
            bins[fi * t + ti] = frame[fi];
        }
    }
    Ok(ComplexSpectrogram { bins, f, t, window, hop, sample_rate: w.sample_rate })
}

/// Inverse STFT by windowed overlap-add with squared-window-sum
/// normalization. Recovers the interior of the original signal (at least
/// one window from either end) to near machine precision; edges where
/// the window sum vanishes are left at zero.
pub fn istft(s: &ComplexSpectrogram) -> Waveform {
    let window = s.window;
    let len = if s.t == 0 { 0 } else { (s.t - 1) * s.hop + window };
    let mut out = vec![0.0; len];
    let mut wsum = vec![0.0; len];
    if s.t == 0 {
        return Waveform { samples: out, sample_rate: s.sample_rate };
    }
    let win = hann_periodic(window);
    let ifft = FftPlanner::new().plan_fft_inverse(window);
    let mut frame = vec![Complex::new(0.0, 0.0); window];
    for ti in 0..s.t {
        // rebuild the full spectrum from the half-spectrum by Hermitian
        // symmetry, then invert
        for fi in 0..s.f {
            frame[fi] = s.bins[fi * s.t + ti];
        }
        for fi in s.f..window {
            frame[fi] = s.bins[(window - fi) * s.t + ti].conj();
        }
        ifft.process(&mut frame);
        let start = ti * s.hop;
        for i in 0..window {
            let v = frame[i].re / window as f64;
            out[start + i] += v * win[i];
            wsum[start + i] += win[i] * win[i];
        }
    }
    for i in 0..len {
        if wsum[i] > 1e-12 {
            out[i] /= wsum[i];
        }
    }
    Waveform { samples: out, sample_rate: s.sample_rate }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::dsp::DEFAULT_SAMPLE_RATE;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap()
    }

    #[test]
    fn zeros_give_zero_grid_of_expected_shape() {
        // (66302 - 1022)/256 + 1 = 256 frames
        let w = Waveform::new(vec![0.0; 66302], DEFAULT_SAMPLE_RATE).unwrap();
        let s = stft(&w, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        assert_eq!((s.f, s.t), (512, 256));
        assert!(s.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn short_input_is_an_error() {
        let w = Waveform::new(vec![0.0; 1021], DEFAULT_SAMPLE_RATE).unwrap();
        assert!(matches!(
            stft(&w, DEFAULT_WINDOW, DEFAULT_HOP),
            Err(DspError::ShortInput { len: 1021, window: 1022 })
        ));
    }

    #[test]
    fn stft_is_linear() {
        let a = noise(8000, 1);
        let b = noise(8000, 2);
        let sum = Waveform::new(
            a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect(),
            DEFAULT_SAMPLE_RATE,
        )
        .unwrap();
        let (sa, sb, ss) = (
            stft(&a, DEFAULT_WINDOW, DEFAULT_HOP).unwrap(),
            stft(&b, DEFAULT_WINDOW, DEFAULT_HOP).unwrap(),
            stft(&sum, DEFAULT_WINDOW, DEFAULT_HOP).unwrap(),
        );
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..ss.bins.len() {
            num += (ss.bins[i] - (sa.bins[i] + sb.bins[i])).norm_sqr();
            den += ss.bins[i].norm_sqr();
        }
        assert!((num / den).sqrt() < 1e-10);
    }

    #[test]
    fn interior_round_trip_is_tight() {
        let w = noise(12000, 3);
        let back = istft(&stft(&w, DEFAULT_WINDOW, DEFAULT_HOP).unwrap());
        let lo = DEFAULT_WINDOW;
        let hi = back.len() - DEFAULT_WINDOW;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in lo..hi {
            let d = back.samples[i] - w.samples[i];
            num += d * d;
            den += w.samples[i] * w.samples[i];
        }
        assert!((num / den).sqrt() < 1e-10, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn sine_peaks_at_predicted_bin_and_matches_naive_dft() {
        // 1 kHz at 11025 Hz with window 1022: bin round(1000*1022/11025) = 93
        let n = 11025;
        let samples: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * 1000.0 * i as f64 / 11025.0).sin() * 0.5)
            .collect();
        let w = Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap();
        let s = stft(&w, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        for ti in 1..s.t - 1 {
            let argmax = (0..s.f)
                .max_by(|&a, &b| s.at(a, ti).norm().total_cmp(&s.at(b, ti).norm()))
                .unwrap();
            assert_eq!(argmax, 93, "frame {ti}");
        }

        // independent check of one frame against a brute-force DFT
        let win = hann_periodic(DEFAULT_WINDOW);
        let start = 5 * DEFAULT_HOP;
        let mut best = (0usize, 0.0f64);
        for k in 0..s.f {
            let mut re = 0.0;
            let mut im = 0.0;
            for i in 0..DEFAULT_WINDOW {
                let ang = -std::f64::consts::TAU * k as f64 * i as f64 / DEFAULT_WINDOW as f64;
                let v = w.samples[start + i] * win[i];
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let mag = (re * re + im * im).sqrt();
            if mag > best.1 {
                best = (k, mag);
            }
        }
        assert_eq!(best.0, 93);
    }

    #[test]
    fn round_trip_is_phase_coherent() {
        let n = 8000;
        let samples: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * 440.0 * i as f64 / 11025.0).sin() * 0.5)
            .collect();
        let w = Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap();
        let back = istft(&stft(&w, DEFAULT_WINDOW, DEFAULT_HOP).unwrap());
        let lo = DEFAULT_WINDOW;
        let hi = back.len() - DEFAULT_WINDOW;
        let max_lag = 50i64;
        let mut best = (i64::MIN, f64::MIN);
        for lag in -max_lag..=max_lag {
            let mut acc = 0.0;
            for i in lo..hi {
                let j = i as i64 + lag;
                if j >= 0 && (j as usize) < w.len() {
                    acc += back.samples[i] * w.samples[j as usize];
                }
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        assert_eq!(best.0, 0, "correlation peaked at lag {}", best.0);
    }

    #[test]
    fn zero_spectrogram_inverts_to_silence() {
        let w = Waveform::new(vec![0.0; 5000], DEFAULT_SAMPLE_RATE).unwrap();
        let s = stft(&w, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        let back = istft(&s);
        assert!(back.samples.iter().all(|&v| v == 0.0));
    }
}
