//! Identity properties of the time-frequency pipeline, at the sizes the
//! training loop actually uses.

use cosep_core::dsp::{
    gt_ratio_masks, istft, log_warp, reconstruct, stft, unwarp, FreqAxis, Grid, MagSpectrogram,
    RatioMask, Waveform, DEFAULT_HOP, DEFAULT_SAMPLE_RATE, DEFAULT_WINDOW, MASK_EPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(n: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), DEFAULT_SAMPLE_RATE).unwrap()
}

/// Mixture of tones plus noise: the kind of magnitude structure the warp
/// sees in practice.
fn tonal(n: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / DEFAULT_SAMPLE_RATE as f64;
            0.3 * (std::f64::consts::TAU * 261.6 * t).sin()
                + 0.2 * (std::f64::consts::TAU * 523.2 * t).sin()
                + 0.15 * (std::f64::consts::TAU * 1308.0 * t).sin()
                + 0.05 * (rng.gen::<f64>() - 0.5)
        })
        .collect();
    Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap()
}

#[test]
fn stft_linearity_at_training_length() {
    // 66302 samples -> exactly 512x256
    let a = noise(66302, 1);
    let b = noise(66302, 2);
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
    assert_eq!((ss.f, ss.t), (512, 256));
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..ss.bins.len() {
        num += (ss.bins[i] - (sa.bins[i] + sb.bins[i])).norm_sqr();
        den += ss.bins[i].norm_sqr();
    }
    let rel = (num / den).sqrt();
    assert!(rel < 1e-10, "linearity rel err {rel}");
}

#[test]
fn istft_round_trip_interior() {
    for seed in [3, 4, 5] {
        let w = noise(66302, seed);
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
        let rel = (num / den).sqrt();
        assert!(rel < 1e-10, "seed {seed}: round-trip rel err {rel}");
    }
}

#[test]
fn ratio_masks_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 512 * 64;
    let mut a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0).collect();
    let mut b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0).collect();
    // sprinkle silent and near-silent cells
    for i in (0..n).step_by(97) {
        a[i] = 0.0;
        b[i] = 0.0;
    }
    for i in (0..n).step_by(131) {
        a[i] = 1e-9;
        b[i] = 1e-9;
    }
    let x1 = MagSpectrogram {
        grid: Grid::from_vec(512, 64, a.clone()).unwrap(),
        axis: FreqAxis::Linear,
    };
    let x2 = MagSpectrogram {
        grid: Grid::from_vec(512, 64, b.clone()).unwrap(),
        axis: FreqAxis::Linear,
    };
    let (m1, m2) = gt_ratio_masks(&x1, &x2).unwrap();
    for i in 0..n {
        let (v1, v2) = (m1.grid.data()[i], m2.grid.data()[i]);
        assert!((0.0..=1.0).contains(&v1) && (0.0..=1.0).contains(&v2));
        if a[i] + b[i] > MASK_EPS {
            assert!((v1 + v2 - 1.0).abs() < 1e-12, "cell {i}: {}", v1 + v2);
        } else {
            assert_eq!((v1, v2), (0.0, 0.0), "silent cell {i} must zero both masks");
        }
    }
}

/// The warp/unwarp pair is built from convex linear interpolation, so it
/// is exactly idempotent only on inputs that are linear between sampling
/// positions (e.g. constants). On real spectrogram magnitudes a second
/// warp reproduces the first up to interpolation smoothing; the bounds
/// here were measured once on this fixture and then frozen.
#[test]
fn warp_round_trip_is_stable() {
    let spec = stft(&tonal(20000, 7), DEFAULT_WINDOW, DEFAULT_HOP).unwrap().magnitude();
    for (b, tol) in [(64usize, 0.20), (256, 0.10)] {
        let w1 = log_warp(&spec, b).unwrap();
        let w2 = log_warp(&unwarp(&w1, 512).unwrap(), b).unwrap();
        let peak = w1.grid.data().iter().fold(0.0f64, |m, &v| m.max(v));
        let sup = w1
            .grid
            .data()
            .iter()
            .zip(w2.grid.data())
            .map(|(&x, &y)| (x - y).abs())
            .fold(0.0f64, f64::max)
            / peak;
        assert!(sup < tol, "b={b}: sup-rel {sup} >= {tol}");

        // convexity: every resampled value stays inside the input range
        let lo = spec.grid.data().iter().fold(f64::INFINITY, |m, &v| m.min(v));
        let hi = spec.grid.data().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        for &v in w2.grid.data() {
            assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }
    }

    // constants are a true fixed point, bitwise
    let flat = MagSpectrogram {
        grid: Grid::from_vec(512, 4, vec![0.7; 512 * 4]).unwrap(),
        axis: FreqAxis::Linear,
    };
    let w = log_warp(&flat, 64).unwrap();
    let w2 = log_warp(&unwarp(&w, 512).unwrap(), 64).unwrap();
    assert_eq!(w.grid, w2.grid);
}

#[test]
fn unit_mask_reconstruction_matches_istft() {
    let w = noise(20000, 8);
    let s = stft(&w, DEFAULT_WINDOW, DEFAULT_HOP).unwrap();
    let ones = RatioMask {
        grid: Grid::from_vec(s.f, s.t, vec![1.0; s.f * s.t]).unwrap(),
        axis: FreqAxis::Linear,
    };
    assert_eq!(reconstruct(&ones, &s).unwrap(), istft(&s));
}
