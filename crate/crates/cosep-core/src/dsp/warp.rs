//! Log-frequency resampling of magnitude grids.
//!
//! The warp samples linear-axis rows at geometrically spaced positions
//! running from bin 1 (the first nonzero frequency) to the Nyquist bin,
//! with linear interpolation between the two straddling bins. The unwarp
//! inverts the position map; the DC row, which the geometric range cannot
//! reach, copies the lowest warped bin.

use super::{DspError, FreqAxis, Grid, MagSpectrogram, RatioMask};

/// Sampling positions (fractional linear-bin indices) for a warp from
/// `f_lin` linear bins onto `b` log-spaced bins: position k is
/// `(f_lin - 1)^(k / (b-1))`, spanning bin 1 to the Nyquist bin.
pub fn warp_positions(f_lin: usize, b: usize) -> Vec<f64> {
    let top = (f_lin - 1) as f64;
    (0..b).map(|k| top.powf(k as f64 / (b - 1) as f64)).collect()
}

/// Interpolate in the `a + t*(b - a)` form: exact when `a == b`, so
/// constant inputs survive resampling bitwise.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn resample_rows(src: &Grid, positions: &[f64]) -> Grid {
    let t = src.cols();
    let max_row = src.rows() - 1;
    let mut out = Grid::zeros(positions.len(), t);
    for (k, &pos) in positions.iter().enumerate() {
        let i0 = (pos.floor() as usize).min(max_row);
        let i1 = (i0 + 1).min(max_row);
        let alpha = pos - i0 as f64;
        for ti in 0..t {
            *out.at_mut(k, ti) = lerp(src.at(i0, ti), src.at(i1, ti), alpha);
        }
    }
    out
}

fn warp_grid(src: &Grid, b: usize, op: &'static str) -> Result<Grid, DspError> {
    if src.rows() < 2 || b < 2 {
        return Err(DspError::Invalid {
            op,
            what: format!("need >= 2 bins on both axes, got {} -> {b}", src.rows()),
        });
    }
    Ok(resample_rows(src, &warp_positions(src.rows(), b)))
}

fn unwarp_grid(src: &Grid, f_lin: usize, op: &'static str) -> Result<Grid, DspError> {
    let b = src.rows();
    if b < 2 || f_lin < 2 {
        return Err(DspError::Invalid {
            op,
            what: format!("need >= 2 bins on both axes, got {b} -> {f_lin}"),
        });
    }
    // invert the position map: linear bin j sits at warped index
    // (b-1) * ln(j) / ln(f_lin - 1)
    let ln_top = ((f_lin - 1) as f64).ln();
    let positions: Vec<f64> =
        (1..f_lin).map(|j| (b - 1) as f64 * (j as f64).ln() / ln_top).collect();
    let body = resample_rows(src, &positions);
    let t = src.cols();
    let mut out = Grid::zeros(f_lin, t);
    for ti in 0..t {
        *out.at_mut(0, ti) = src.at(0, ti); // DC row mirrors the lowest warped bin
    }
    for j in 1..f_lin {
        for ti in 0..t {
            *out.at_mut(j, ti) = body.at(j - 1, ti);
        }
    }
    Ok(out)
}

/// Resample a linear-axis magnitude spectrogram onto `b` log-spaced bins.
pub fn log_warp(m: &MagSpectrogram, b: usize) -> Result<MagSpectrogram, DspError> {
    if m.axis != FreqAxis::Linear {
        return Err(DspError::AxisMismatch {
            op: "log_warp",
            expected: FreqAxis::Linear.name(),
            got: m.axis.name(),
        });
    }
    Ok(MagSpectrogram { grid: warp_grid(&m.grid, b, "log_warp")?, axis: FreqAxis::LogWarped })
}

/// Map a log-warped magnitude spectrogram back onto `f_lin` linear bins.
pub fn unwarp(m: &MagSpectrogram, f_lin: usize) -> Result<MagSpectrogram, DspError> {
    if m.axis != FreqAxis::LogWarped {
        return Err(DspError::AxisMismatch {
            op: "unwarp",
            expected: FreqAxis::LogWarped.name(),
            got: m.axis.name(),
        });
    }
    Ok(MagSpectrogram { grid: unwarp_grid(&m.grid, f_lin, "unwarp")?, axis: FreqAxis::Linear })
}

/// Unwarp a mask the same way as a magnitude grid. Interpolation weights
/// are convex, so a mask in [0,1] stays in [0,1].
pub fn unwarp_mask(m: &RatioMask, f_lin: usize) -> Result<RatioMask, DspError> {
    if m.axis != FreqAxis::LogWarped {
        return Err(DspError::AxisMismatch {
            op: "unwarp_mask",
            expected: FreqAxis::LogWarped.name(),
            got: m.axis.name(),
        });
    }
    Ok(RatioMask { grid: unwarp_grid(&m.grid, f_lin, "unwarp_mask")?, axis: FreqAxis::Linear })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn linear_mag(grid: Grid) -> MagSpectrogram {
        MagSpectrogram { grid, axis: FreqAxis::Linear }
    }

    #[test]
    fn constants_survive_warp_bitwise() {
        let ones = Grid::from_vec(512, 3, vec![1.0; 512 * 3]).unwrap();
        let w = log_warp(&linear_mag(ones), 64).unwrap();
        assert_eq!(w.axis, FreqAxis::LogWarped);
        assert_eq!((w.f(), w.t()), (64, 3));
        assert!(w.grid.data().iter().all(|&v| v == 1.0));
        let back = unwarp(&w, 512).unwrap();
        assert!(back.grid.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn wrong_axis_is_rejected() {
        let m = linear_mag(Grid::zeros(512, 4));
        assert!(matches!(unwarp(&m, 512), Err(DspError::AxisMismatch { op: "unwarp", .. })));
        let w = log_warp(&m, 64).unwrap();
        assert!(matches!(log_warp(&w, 64), Err(DspError::AxisMismatch { op: "log_warp", .. })));
    }

    /// A single nonzero linear bin lands on the warped bins whose sampling
    /// positions fall within one bin of it, with plain interpolation
    /// weights 1 - |position - bin|. In the sparsely sampled high-frequency
    /// region that is at most two adjacent warped bins.
    #[test]
    fn impulse_row_hits_predicted_bins_with_predicted_weights() {
        for (b, j) in [(64usize, 10usize), (64, 419), (256, 93)] {
            let mut g = Grid::zeros(512, 2);
            *g.at_mut(j, 0) = 1.0;
            *g.at_mut(j, 1) = 2.0;
            let w = log_warp(&linear_mag(g), b).unwrap();

            let expected: Vec<f64> = warp_positions(512, b)
                .iter()
                .map(|&p| (1.0 - (p - j as f64).abs()).max(0.0))
                .collect();
            let hit: Vec<usize> =
                (0..b).filter(|&k| expected[k] > 0.0).collect();
            assert!(!hit.is_empty(), "choose a bin some position can see (b={b} j={j})");
            assert!(hit.len() <= 2, "b={b} j={j}: hit {hit:?}");
            if hit.len() == 2 {
                assert_eq!(hit[1], hit[0] + 1, "hits must be adjacent");
            }
            for k in 0..b {
                assert!(
                    (w.grid.at(k, 0) - expected[k]).abs() < 1e-12,
                    "b={b} j={j} k={k}: got {} want {}",
                    w.grid.at(k, 0),
                    expected[k]
                );
                assert!((w.grid.at(k, 1) - 2.0 * expected[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unwarp_copies_lowest_bin_into_dc() {
        let mut g = Grid::zeros(64, 2);
        for k in 0..64 {
            *g.at_mut(k, 0) = k as f64;
            *g.at_mut(k, 1) = 63.0 - k as f64;
        }
        let warped = MagSpectrogram { grid: g, axis: FreqAxis::LogWarped };
        let lin = unwarp(&warped, 512).unwrap();
        assert_eq!(lin.grid.at(0, 0), warped.grid.at(0, 0));
        assert_eq!(lin.grid.at(0, 1), warped.grid.at(0, 1));
        // bin 1 sits at warped position 0 exactly
        assert_eq!(lin.grid.at(1, 0), warped.grid.at(0, 0));
        // Nyquist bin sits at the top warped position exactly
        assert_eq!(lin.grid.at(511, 0), warped.grid.at(63, 0));
    }

    #[test]
    fn unwarped_mask_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..64 * 8).map(|_| rng.gen::<f64>()).collect();
        let mask = RatioMask {
            grid: Grid::from_vec(64, 8, data).unwrap(),
            axis: FreqAxis::LogWarped,
        };
        let lin = unwarp_mask(&mask, 512).unwrap();
        assert!(lin.grid.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
