//! Audio I/O and the time-frequency pipeline: STFT, log-frequency warp,
//! magnitude masks, and reconstruction with mixture phase.
//!
//! All stages are pure functions on value types; nothing here holds
//! shared mutable state.

mod grid;
mod mask;
mod stft;
mod warp;
mod wav;

pub use grid::{read_grid, write_grid, Grid};
pub use mask::{apply_mask, gt_ratio_masks, reconstruct, MASK_EPS};
pub use stft::{hann_periodic, istft, stft, DEFAULT_HOP, DEFAULT_WINDOW};
pub use warp::{log_warp, unwarp, unwarp_mask, warp_positions};
pub use wav::{read_wav, write_wav};

use rustfft::num_complex::Complex;

pub const DEFAULT_SAMPLE_RATE: u32 = 11025;

#[derive(Debug, thiserror::Error)]
pub enum DspError {
    #[error("waveform has {len} samples, need at least one window ({window})")]
    ShortInput { len: usize, window: usize },
    #[error("{op}: expected {expected} frequency axis, got {got}")]
    AxisMismatch { op: &'static str, expected: &'static str, got: &'static str },
    #[error("{op}: grid shapes {lhs:?} and {rhs:?} differ")]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("{op}: negative magnitude input")]
    NegativeInput { op: &'static str },
    #[error("{op}: {what}")]
    Invalid { op: &'static str, what: String },
    #[error("wav {path}: {what}")]
    Wav { path: String, what: String },
    #[error("grid {path}: {what}")]
    GridFile { path: String, what: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Single-channel audio at a fixed sample rate, samples in [-1, 1] by
/// convention (not enforced; synthesis keeps headroom).
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if sample_rate == 0 {
            return Err(DspError::Invalid { op: "waveform", what: "sample_rate is 0".into() });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(DspError::Invalid {
                op: "waveform",
                what: format!("non-finite sample at index {i}"),
            });
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Which frequency axis a magnitude grid or mask lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreqAxis {
    /// STFT bins, uniformly spaced from DC to Nyquist.
    Linear,
    /// Resampled onto geometrically spaced bins (see [`log_warp`]).
    LogWarped,
}

impl FreqAxis {
    fn name(self) -> &'static str {
        match self {
            FreqAxis::Linear => "linear",
            FreqAxis::LogWarped => "log-warped",
        }
    }
}

/// Complex STFT of a waveform: `f` frequency rows by `t` frame columns,
/// stored row-major with the STFT parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Vec<Complex<f64>>,
    pub f: usize,
    pub t: usize,
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn at(&self, fi: usize, ti: usize) -> Complex<f64> {
        self.bins[fi * self.t + ti]
    }

    /// Elementwise magnitudes as a linear-axis [`MagSpectrogram`].
    pub fn magnitude(&self) -> MagSpectrogram {
        let data = self.bins.iter().map(|c| c.norm()).collect();
        MagSpectrogram {
            grid: Grid::from_vec(self.f, self.t, data).expect("bins match f*t"),
            axis: FreqAxis::Linear,
        }
    }
}

/// Nonnegative magnitude grid (frequency rows x time columns) tagged with
/// its frequency axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MagSpectrogram {
    pub grid: Grid,
    pub axis: FreqAxis,
}

impl MagSpectrogram {
    pub fn f(&self) -> usize {
        self.grid.rows()
    }

    pub fn t(&self) -> usize {
        self.grid.cols()
    }
}

/// Time-frequency mask on the same layout as [`MagSpectrogram`].
/// Ground-truth masks lie in [0,1]; predicted masks in (0,1).
#[derive(Debug, Clone, PartialEq)]
pub struct RatioMask {
    pub grid: Grid,
    pub axis: FreqAxis,
}

impl RatioMask {
    pub fn f(&self) -> usize {
        self.grid.rows()
    }

    pub fn t(&self) -> usize {
        self.grid.cols()
    }
}
