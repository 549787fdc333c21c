//! Source-separation metrics: SDR, SIR, and SAR from filter-based
//! orthogonal projections, best-permutation matching, and NSDR.
//!
//! Each estimate is decomposed as s_target + e_interf + e_artif, where
//! s_target is the projection onto time shifts (filter length L) of its
//! reference, e_interf adds the remaining references' subspace, and
//! e_artif is what no reference explains. Ratios are reported in dB,
//! capped at ±60.

pub mod oracle;
mod proj;
mod report;

pub use report::{aggregate_csv, write_score_records, ScoreRecord};

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use proj::{energy, Projector};

/// Default filter length (lags) for the projection subspaces.
pub const DEFAULT_FILTER_LEN: usize = 512;
/// Ratios are capped at this magnitude in dB.
pub const DB_CAP: f64 = 60.0;
/// Residual-to-signal energy ratio below which a score is capped.
const CAP_RATIO: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum BssError {
    #[error("no sources given")]
    Empty,
    #[error("signal length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("estimate/reference count mismatch: {estimates} vs {references}")]
    CountMismatch { estimates: usize, references: usize },
    #[error("reference {index} is identically zero")]
    ZeroReference { index: usize },
    #[error("filter length must be at least 1")]
    BadFilterLen,
    #[error("best_permutation supports at most 4 sources, got {0}")]
    TooManySources(usize),
    #[error("sample rate mismatch: {0} vs {1}")]
    SampleRateMismatch(u32, u32),
    #[error("Gram matrix not positive definite even after ridge escalation")]
    Singular,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BssScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    /// Set when any ratio hit the +60 dB cap (residual underflow).
    pub capped: bool,
}

/// 10·log10(num/den), clamped to ±60 dB; flags the upper cap.
fn ratio_db(num: f64, den: f64) -> (f64, bool) {
    if num <= 0.0 {
        return (-DB_CAP, false);
    }
    if den <= num * CAP_RATIO {
        return (DB_CAP, true);
    }
    let db = 10.0 * (num / den).log10();
    if db >= DB_CAP {
        (DB_CAP, true)
    } else if db <= -DB_CAP {
        (-DB_CAP, false)
    } else {
        (db, false)
    }
}

fn scores_for(projector: &Projector, estimate: &[f64], target: usize) -> BssScores {
    let padded = projector.pad(estimate);
    let p_all = projector.project_all(estimate);
    let s_target = projector.project_single(estimate, target);
    let n = padded.len();
    let mut e_interf = vec![0.0; n];
    let mut e_artif = vec![0.0; n];
    for i in 0..n {
        e_interf[i] = p_all[i] - s_target[i];
        e_artif[i] = padded[i] - p_all[i];
    }
    let et = energy(&s_target);
    let ei = energy(&e_interf);
    let ea = energy(&e_artif);
    let distortion: f64 = e_interf.iter().zip(&e_artif).map(|(a, b)| (a + b) * (a + b)).sum();
    let (sdr, c1) = ratio_db(et, distortion);
    let (sir, c2) = ratio_db(et, ei);
    let (sar, c3) = ratio_db(et + ei, ea);
    BssScores { sdr, sir, sar, capped: c1 || c2 || c3 }
}

fn check_inputs(
    estimates: &[Waveform],
    references: &[Waveform],
) -> Result<usize, BssError> {
    if estimates.len() != references.len() {
        return Err(BssError::CountMismatch {
            estimates: estimates.len(),
            references: references.len(),
        });
    }
    if estimates.is_empty() {
        return Err(BssError::Empty);
    }
    let t = references[0].samples.len();
    let sr = references[0].sample_rate;
    for w in references.iter().chain(estimates.iter()) {
        if w.samples.len() != t {
            return Err(BssError::LengthMismatch { expected: t, got: w.samples.len() });
        }
        if w.sample_rate != sr {
            return Err(BssError::SampleRateMismatch(sr, w.sample_rate));
        }
    }
    Ok(t)
}

/// Score estimate i against reference i, for all i.
pub fn bss_eval(
    estimates: &[Waveform],
    references: &[Waveform],
    filter_len: usize,
) -> Result<Vec<BssScores>, BssError> {
    check_inputs(estimates, references)?;
    let refs: Vec<&[f64]> = references.iter().map(|w| w.samples.as_slice()).collect();
    let projector = Projector::new(&refs, filter_len)?;
    Ok(estimates
        .iter()
        .enumerate()
        .map(|(i, e)| scores_for(&projector, &e.samples, i))
        .collect())
}

/// Try every assignment of estimates to references (n ≤ 4) and return the
/// permutation maximizing mean SDR: `assignment[i]` is the reference index
/// matched to estimate i, scores are reported under that matching.
pub fn best_permutation(
    estimates: &[Waveform],
    references: &[Waveform],
    filter_len: usize,
) -> Result<(Vec<usize>, Vec<BssScores>), BssError> {
    check_inputs(estimates, references)?;
    let n = estimates.len();
    if n > 4 {
        return Err(BssError::TooManySources(n));
    }
    let refs: Vec<&[f64]> = references.iter().map(|w| w.samples.as_slice()).collect();
    let projector = Projector::new(&refs, filter_len)?;

    // Score every (estimate, reference) pair once.
    let mut matrix = vec![Vec::with_capacity(n); n];
    for (i, e) in estimates.iter().enumerate() {
        for j in 0..n {
            matrix[i].push(scores_for(&projector, &e.samples, j));
        }
    }

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |p| {
        let mean = p.iter().enumerate().map(|(i, &j)| matrix[i][j].sdr).sum::<f64>() / n as f64;
        if best.as_ref().is_none_or(|(_, b)| mean > *b) {
            best = Some((p.to_vec(), mean));
        }
    });
    let (assignment, _) = best.expect("at least one permutation");
    let scores = assignment.iter().enumerate().map(|(i, &j)| matrix[i][j]).collect();
    Ok((assignment, scores))
}

fn permute(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Normalized SDR: how much the estimate improves on just taking the
/// mixture. SDR(estimate, reference) − SDR(mixture, reference).
pub fn nsdr(
    estimate: &Waveform,
    mixture: &Waveform,
    reference: &Waveform,
    filter_len: usize,
) -> Result<f64, BssError> {
    let refs = std::slice::from_ref(reference);
    let est = bss_eval(std::slice::from_ref(estimate), refs, filter_len)?;
    let mix = bss_eval(std::slice::from_ref(mixture), refs, filter_len)?;
    Ok(est[0].sdr - mix[0].sdr)
}
