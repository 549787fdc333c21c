//! Ratio masks: ground-truth construction, application, reconstruction.

use super::{
    istft, unwarp_mask, ComplexSpectrogram, DspError, FreqAxis, Grid, MagSpectrogram, RatioMask,
    Waveform,
};

/// Denominator floor for ground-truth ratio masks: below this total
/// energy a time-frequency cell is treated as silent and both masks get
/// zero rather than an arbitrary split.
pub const MASK_EPS: f64 = 1e-8;

/// Elementwise product of a mask and a magnitude spectrogram (the
/// separated magnitude estimate).
pub fn apply_mask(x: &MagSpectrogram, m: &RatioMask) -> Result<MagSpectrogram, DspError> {
    if x.axis != m.axis {
        return Err(DspError::AxisMismatch {
            op: "apply_mask",
            expected: x.axis.name(),
            got: m.axis.name(),
        });
    }
    if x.grid.shape() != m.grid.shape() {
        return Err(DspError::ShapeMismatch {
            op: "apply_mask",
            lhs: x.grid.shape(),
            rhs: m.grid.shape(),
        });
    }
    let data: Vec<f64> =
        x.grid.data().iter().zip(m.grid.data()).map(|(&a, &b)| a * b).collect();
    Ok(MagSpectrogram {
        grid: Grid::from_vec(x.grid.rows(), x.grid.cols(), data)?,
        axis: x.axis,
    })
}

/// Ground-truth ratio masks for a pair of source magnitudes:
/// `m1 = x1 / (x1 + x2)` and its complement, with cells whose summed
/// magnitude is at most [`MASK_EPS`] zeroed in both masks. Wherever the
/// denominator clears the floor the two masks sum to exactly 1.
pub fn gt_ratio_masks(
    x1: &MagSpectrogram,
    x2: &MagSpectrogram,
) -> Result<(RatioMask, RatioMask), DspError> {
    if x1.axis != x2.axis {
        return Err(DspError::AxisMismatch {
            op: "gt_ratio_masks",
            expected: x1.axis.name(),
            got: x2.axis.name(),
        });
    }
    if x1.grid.shape() != x2.grid.shape() {
        return Err(DspError::ShapeMismatch {
            op: "gt_ratio_masks",
            lhs: x1.grid.shape(),
            rhs: x2.grid.shape(),
        });
    }
    for m in [x1, x2] {
        if m.grid.data().iter().any(|&v| v < 0.0) {
            return Err(DspError::NegativeInput { op: "gt_ratio_masks" });
        }
    }
    let n = x1.grid.data().len();
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for i in 0..n {
        let (a, b) = (x1.grid.data()[i], x2.grid.data()[i]);
        let denom = a + b;
        if denom > MASK_EPS {
            m1[i] = a / denom;
            m2[i] = b / denom;
        }
    }
    let shape = x1.grid.shape();
    Ok((
        RatioMask { grid: Grid::from_vec(shape.0, shape.1, m1)?, axis: x1.axis },
        RatioMask { grid: Grid::from_vec(shape.0, shape.1, m2)?, axis: x1.axis },
    ))
}

/// Apply a mask to the complex mixture and invert. A log-warped mask is
/// first unwarped onto the linear axis. Because the mask is real and
/// nonnegative, scaling the complex bins is identical to recombining the
/// masked magnitude with the mixture phase.
pub fn reconstruct(m: &RatioMask, mixture: &ComplexSpectrogram) -> Result<Waveform, DspError> {
    let linear;
    let mask = if m.axis == FreqAxis::LogWarped {
        linear = unwarp_mask(m, mixture.f)?;
        &linear
    } else {
        m
    };
    if mask.grid.shape() != (mixture.f, mixture.t) {
        return Err(DspError::ShapeMismatch {
            op: "reconstruct",
            lhs: mask.grid.shape(),
            rhs: (mixture.f, mixture.t),
        });
    }
    let mut masked = mixture.clone();
    for (c, &v) in masked.bins.iter_mut().zip(mask.grid.data()) {
        *c *= v;
    }
    Ok(istft(&masked))
}
