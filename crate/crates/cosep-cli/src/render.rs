//! Diagnostic images: grayscale PNGs of spectrograms (log-magnitude,
//! normalized to the frame's own peak) and ratio masks (0..1 mapped
//! straight to black..white). Low frequencies sit at the bottom edge.

use std::path::Path;

use image::{GrayImage, Luma};

use cosep_core::dsp::{MagSpectrogram, RatioMask};

use crate::CliError;

fn save_gray(path: &Path, f: usize, t: usize, value: impl Fn(usize, usize) -> f64) -> Result<(), CliError> {
    let mut img = GrayImage::new(t.max(1) as u32, f.max(1) as u32);
    for y in 0..f {
        for x in 0..t {
            let v = value(f - 1 - y, x).clamp(0.0, 1.0);
            img.put_pixel(x as u32, y as u32, Luma([(v * 255.0).round() as u8]));
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn render_spectrogram(mag: &MagSpectrogram, path: &Path) -> Result<(), CliError> {
    let (f, t) = mag.grid.shape();
    let peak = mag.grid.data().iter().fold(0.0f64, |m, &v| m.max(v));
    let denom = (1.0 + peak).ln().max(f64::MIN_POSITIVE);
    save_gray(path, f, t, |fi, ti| (1.0 + mag.grid.at(fi, ti)).ln() / denom)
}

pub fn render_mask(mask: &RatioMask, path: &Path) -> Result<(), CliError> {
    let (f, t) = mask.grid.shape();
    save_gray(path, f, t, |fi, ti| mask.grid.at(fi, ti))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cosep_core::dsp::{stft, Waveform, DEFAULT_HOP, DEFAULT_WINDOW};

    #[test]
    fn renders_valid_png_files() {
        let dir = tempfile::tempdir().unwrap();
        let wave = Waveform::new(
            (0..4096).map(|i| (i as f64 * 0.05).sin() * 0.4).collect(),
            11025,
        )
        .unwrap();
        let spec = stft(&wave, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
        let mag = spec.magnitude();

        let spec_png = dir.path().join("spec.png");
        render_spectrogram(&mag, &spec_png).unwrap();
        let img = image::open(&spec_png).unwrap().to_luma8();
        assert_eq!(img.width() as usize, mag.grid.cols());
        assert_eq!(img.height() as usize, mag.grid.rows());
        // Normalization puts the peak bin at full white.
        assert!(img.pixels().any(|p| p.0[0] == 255));

        let (f, t) = mag.grid.shape();
        let half = RatioMask {
            grid: cosep_core::dsp::Grid::from_vec(f, t, vec![0.5; f * t]).unwrap(),
            axis: cosep_core::dsp::FreqAxis::Linear,
        };
        let mask_png = dir.path().join("mask.png");
        render_mask(&half, &mask_png).unwrap();
        let img = image::open(&mask_png).unwrap().to_luma8();
        // A uniform 0.5 mask renders mid-gray.
        assert!(img.pixels().all(|p| (p.0[0] as i32 - 128).abs() <= 1));
    }
}
