//! Weight initialization.

use rand::Rng;

use super::Tensor;

/// Zero-mean Gaussian with std `sqrt(2 / fan_in)` (He initialization),
/// sampled via Box-Muller so only a uniform source is needed.
pub fn fan_in_gaussian<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        // u1 in (0, 1] so ln never sees zero
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        data.push(std * r * theta.cos());
        if data.len() < n {
            data.push(std * r * theta.sin());
        }
    }
    Tensor::new(shape, data).expect("generated data matches shape")
}
