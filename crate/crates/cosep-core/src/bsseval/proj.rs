//! Least-squares projections onto spans of time-shifted references, the
//! core of the filter-based SDR/SIR/SAR decomposition. Gram matrices are
//! assembled from FFT cross-correlations (block-Toeplitz structure) and
//! solved by Cholesky with a small relative ridge.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::BssError;

/// Relative ridge added to the Gram diagonal before factoring.
const RIDGE_REL: f64 = 1e-10;
/// Escalation ceiling when the factorization still fails.
const RIDGE_MAX_REL: f64 = 1e-4;

pub(crate) struct Projector {
    l: usize,
    /// Padded signal length: original length + l − 1.
    m: usize,
    fft_len: usize,
    refs: Vec<Vec<f64>>,
    refs_f: Vec<Vec<Complex<f64>>>,
    /// Cholesky of the full Gram over all n·l shifted references.
    chol_all: Cholesky<f64, Dyn>,
    /// Per-reference l×l Gram factorizations.
    chol_single: Vec<Cholesky<f64, Dyn>>,
}

fn fft_forward(samples: &[f64], fft_len: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    buf.resize(fft_len, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(fft_len).process(&mut buf);
    buf
}

fn ifft_real(mut spec: Vec<Complex<f64>>) -> Vec<f64> {
    let n = spec.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.into_iter().map(|c| c.re / n as f64).collect()
}

impl Projector {
    pub fn new(references: &[&[f64]], l: usize) -> Result<Self, BssError> {
        let n = references.len();
        if n == 0 {
            return Err(BssError::Empty);
        }
        if l == 0 {
            return Err(BssError::BadFilterLen);
        }
        let t = references[0].len();
        if t == 0 {
            return Err(BssError::Empty);
        }
        for (i, r) in references.iter().enumerate() {
            if r.len() != t {
                return Err(BssError::LengthMismatch { expected: t, got: r.len() });
            }
            if r.iter().all(|&s| s == 0.0) {
                return Err(BssError::ZeroReference { index: i });
            }
        }
        let m = t + l - 1;
        let fft_len = (t + l).next_power_of_two();
        let refs_f: Vec<Vec<Complex<f64>>> =
            references.iter().map(|r| fft_forward(r, fft_len)).collect();

        // corr[j][k] at lag τ ∈ −(l−1)..=(l−1): Σ_u r_j[u]·r_k[u+τ],
        // stored at index τ + (l−1).
        let mut corr = vec![vec![vec![0.0; 2 * l - 1]; n]; n];
        for j in 0..n {
            for k in j..n {
                let prod: Vec<Complex<f64>> =
                    refs_f[j].iter().zip(&refs_f[k]).map(|(a, b)| a.conj() * b).collect();
                let c = ifft_real(prod);
                for (idx, slot) in corr[j][k].iter_mut().enumerate() {
                    let tau = idx as isize - (l as isize - 1);
                    let pos = if tau >= 0 { tau as usize } else { fft_len - (-tau) as usize };
                    *slot = c[pos];
                }
                if k != j {
                    // c_{kj}(τ) = c_{jk}(−τ)
                    for idx in 0..2 * l - 1 {
                        corr[k][j][idx] = corr[j][k][2 * l - 2 - idx];
                    }
                }
            }
        }

        let max_diag = (0..n).map(|j| corr[j][j][l - 1]).fold(0.0f64, f64::max);
        let build = |ridge: f64| -> DMatrix<f64> {
            let mut g = DMatrix::zeros(n * l, n * l);
            for j in 0..n {
                for k in 0..n {
                    for l1 in 0..l {
                        for l2 in 0..l {
                            // ⟨shift(r_j,l1), shift(r_k,l2)⟩ = c_{jk}(l1−l2)
                            let idx = (l1 as isize - l2 as isize + l as isize - 1) as usize;
                            g[(j * l + l1, k * l + l2)] = corr[j][k][idx];
                        }
                    }
                }
            }
            for d in 0..n * l {
                g[(d, d)] += ridge;
            }
            g
        };
        let factor = |block: DMatrix<f64>| -> Option<Cholesky<f64, Dyn>> { Cholesky::new(block) };

        let mut ridge = RIDGE_REL * max_diag;
        let chol_all = loop {
            match factor(build(ridge)) {
                Some(c) => break c,
                None if ridge < RIDGE_MAX_REL * max_diag => ridge *= 100.0,
                None => return Err(BssError::Singular),
            }
        };

        let mut chol_single = Vec::with_capacity(n);
        for j in 0..n {
            let mut ridge = RIDGE_REL * max_diag;
            let single = loop {
                let mut g = DMatrix::zeros(l, l);
                for l1 in 0..l {
                    for l2 in 0..l {
                        let idx = (l1 as isize - l2 as isize + l as isize - 1) as usize;
                        g[(l1, l2)] = corr[j][j][idx];
                    }
                }
                for d in 0..l {
                    g[(d, d)] += ridge;
                }
                match factor(g) {
                    Some(c) => break c,
                    None if ridge < RIDGE_MAX_REL * max_diag => ridge *= 100.0,
                    None => return Err(BssError::Singular),
                }
            };
            chol_single.push(single);
        }

        Ok(Projector {
            l,
            m,
            fft_len,
            refs: references.iter().map(|r| r.to_vec()).collect(),
            refs_f,
            chol_all,
            chol_single,
        })
    }

    /// Zero-pad an estimate to the shifted-reference length.
    pub fn pad(&self, estimate: &[f64]) -> Vec<f64> {
        let mut e = estimate.to_vec();
        e.resize(self.m, 0.0);
        e
    }

    /// ⟨estimate, shift(r_k, lag)⟩ for lag ∈ 0..l, all k.
    fn rhs(&self, estimate: &[f64]) -> Vec<f64> {
        let est_f = fft_forward(estimate, self.fft_len);
        let mut d = Vec::with_capacity(self.refs.len() * self.l);
        for rf in &self.refs_f {
            let prod: Vec<Complex<f64>> =
                rf.iter().zip(&est_f).map(|(a, b)| a.conj() * b).collect();
            let c = ifft_real(prod);
            d.extend_from_slice(&c[..self.l]);
        }
        d
    }

    /// Synthesize Σ_{k,lag} coef[k·l+lag]·shift(r_k, lag) over the padded
    /// length, via frequency-domain filtering.
    fn synth(&self, coef: &[f64], sources: &[usize]) -> Vec<f64> {
        let mut acc = vec![Complex::new(0.0, 0.0); self.fft_len];
        for &k in sources {
            let a_f = fft_forward(&coef[k * self.l..(k + 1) * self.l], self.fft_len);
            for (slot, (af, rf)) in acc.iter_mut().zip(a_f.iter().zip(&self.refs_f[k])) {
                *slot += af * rf;
            }
        }
        let mut out = ifft_real(acc);
        out.truncate(self.m);
        out
    }

    /// Project the (unpadded) estimate onto the span of all shifted
    /// references; returns the padded-length projection.
    pub fn project_all(&self, estimate: &[f64]) -> Vec<f64> {
        let d = DVector::from_vec(self.rhs(estimate));
        let coef = self.chol_all.solve(&d);
        let all: Vec<usize> = (0..self.refs.len()).collect();
        self.synth(coef.as_slice(), &all)
    }

    /// Project onto shifts of reference `target` only.
    pub fn project_single(&self, estimate: &[f64], target: usize) -> Vec<f64> {
        let d_full = self.rhs(estimate);
        let d = DVector::from_vec(d_full[target * self.l..(target + 1) * self.l].to_vec());
        let coef = self.chol_single[target].solve(&d);
        let mut full = vec![0.0; self.refs.len() * self.l];
        full[target * self.l..(target + 1) * self.l].copy_from_slice(coef.as_slice());
        self.synth(&full, &[target])
    }
}

pub(crate) fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
