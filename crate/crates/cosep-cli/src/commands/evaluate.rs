//! `cosep evaluate`: pairwise test mixtures from held-out solo clips of
//! distinct classes, scored with bss_eval under the grounded assignment
//! (estimate i ↔ the class it was conditioned on) and, for reference,
//! the best permutation. Oracle-mask and mixture-as-estimate modes bound
//! the achievable range from above and below.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use cosep_core::bsseval::{
    aggregate_csv, best_permutation, bss_eval, nsdr, write_score_records, BssScores, ScoreRecord,
};
use cosep_core::corpus::{load_corpus, Split};
use cosep_core::cotrain::ClipAudio;
use cosep_core::dsp::Waveform;
use cosep_core::sepnet::SepModel;

use crate::config::EvalConfig;
use crate::pairs::{mix, solo_pairs, subsample, trim};
use crate::sep::{oracle_separate, separate_clip};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Separate with a trained checkpoint.
    Model,
    /// Ground-truth ratio masks: the upper bound of the mask pipeline.
    OracleMask,
    /// The mixture itself as every estimate: the floor, NSDR ≡ 0.
    MixtureBaseline,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Model => "model",
            EvalMode::OracleMask => "oracle_mask",
            EvalMode::MixtureBaseline => "mixture_baseline",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairReport {
    pub pair_id: String,
    pub clips: [String; 2],
    pub classes: [usize; 2],
    /// Scores under the grounded assignment, estimate i vs reference i.
    pub grounded: [BssScores; 2],
    pub nsdr: [f64; 2],
    /// Scores under the SDR-maximizing assignment.
    pub permuted: [BssScores; 2],
    /// permuted[i] scored estimate i against reference assignment[i].
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub filter_len: usize,
    pub n_pairs: usize,
    pub mean_sdr: f64,
    pub stderr_sdr: f64,
    pub mean_sir: f64,
    pub mean_sar: f64,
    pub mean_nsdr: f64,
    pub mean_perm_sdr: f64,
    pub pairs: Vec<PairReport>,
}

/// A fully materialized test mixture, ready to score.
struct PairJob {
    pair_id: String,
    clips: [String; 2],
    classes: [usize; 2],
    refs: [Waveform; 2],
    mixture: Waveform,
}

fn score_pair(
    job: &PairJob,
    mode: EvalMode,
    model: Option<&mut SepModel>,
    filter_len: usize,
) -> Result<PairReport, CliError> {
    let estimates: Vec<Waveform> = match mode {
        EvalMode::Model => {
            let model = model.expect("model mode requires a checkpoint");
            separate_clip(model, &job.mixture, &job.classes)?
        }
        EvalMode::OracleMask => oracle_separate(&job.refs, &job.mixture)?,
        EvalMode::MixtureBaseline => vec![job.mixture.clone(), job.mixture.clone()],
    };
    let grounded = bss_eval(&estimates, &job.refs, filter_len)?;
    let (assignment, permuted) = best_permutation(&estimates, &job.refs, filter_len)?;
    let nsdr = [
        nsdr(&estimates[0], &job.mixture, &job.refs[0], filter_len)?,
        nsdr(&estimates[1], &job.mixture, &job.refs[1], filter_len)?,
    ];
    Ok(PairReport {
        pair_id: job.pair_id.clone(),
        clips: job.clips.clone(),
        classes: job.classes,
        grounded: [grounded[0], grounded[1]],
        nsdr,
        permuted: [permuted[0], permuted[1]],
        assignment,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    let m = v.iter().sum::<f64>() / n.max(1) as f64;
    let stderr = if n > 1 {
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    (m, stderr, n)
}

pub fn cmd_evaluate(
    checkpoint: Option<&Path>,
    corpus_dir: &Path,
    out_dir: &Path,
    eval: &EvalConfig,
    mode: EvalMode,
) -> Result<EvalReport, CliError> {
    let model: Option<SepModel> = match (mode, checkpoint) {
        (EvalMode::Model, Some(p)) => Some(SepModel::load(p)?),
        (EvalMode::Model, None) => {
            return Err(CliError::Config("model evaluation needs --checkpoint".into()))
        }
        _ => None,
    };

    let corpus = load_corpus(corpus_dir)?;
    let clips = ClipAudio::from_corpus(&corpus, Split::Test)?;
    let pairs = subsample(solo_pairs(&clips), eval.max_pairs, eval.pairs_seed);
    if pairs.is_empty() {
        return Err(CliError::NoTestPairs);
    }

    // Materialize every mixture up front; scoring then parallelizes
    // cleanly across pairs.
    let mut jobs = Vec::with_capacity(pairs.len());
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let (a, b) = (&clips[a], &clips[b]);
        let len = a.audio.len().min(b.audio.len());
        let refs = [trim(&a.audio, len)?, trim(&b.audio, len)?];
        let mixture = mix(&refs[0], &refs[1])?;
        jobs.push(PairJob {
            pair_id: format!("pair_{k:04}"),
            clips: [a.id.clone(), b.id.clone()],
            classes: [a.tags[0], b.tags[0]],
            refs,
            mixture,
        });
    }

    let n_workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len());
    let filter_len = eval.filter_len;
    let mut reports: Vec<Option<PairReport>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|s| -> Result<(), CliError> {
        let jobs = &jobs;
        let handles: Vec<_> = (0..n_workers)
            .map(|w| {
                let mut model = model.clone();
                s.spawn(move || -> Result<Vec<(usize, PairReport)>, CliError> {
                    (w..jobs.len())
                        .step_by(n_workers)
                        .map(|k| Ok((k, score_pair(&jobs[k], mode, model.as_mut(), filter_len)?)))
                        .collect()
                })
            })
            .collect();
        for h in handles {
            for (k, r) in h.join().expect("evaluation worker panicked")? {
                reports[k] = Some(r);
            }
        }
        Ok(())
    })?;
    let pair_reports: Vec<PairReport> =
        reports.into_iter().map(|r| r.expect("every pair scored")).collect();

    let all = |f: &dyn Fn(&PairReport) -> [f64; 2]| {
        pair_reports.iter().flat_map(|p| f(p)).collect::<Vec<f64>>()
    };
    let (mean_sdr, stderr_sdr, _) =
        mean(all(&|p| [p.grounded[0].sdr, p.grounded[1].sdr]).into_iter());
    let (mean_sir, _, _) = mean(all(&|p| [p.grounded[0].sir, p.grounded[1].sir]).into_iter());
    let (mean_sar, _, _) = mean(all(&|p| [p.grounded[0].sar, p.grounded[1].sar]).into_iter());
    let (mean_nsdr, _, _) = mean(all(&|p| p.nsdr).into_iter());
    let (mean_perm_sdr, _, _) =
        mean(all(&|p| [p.permuted[0].sdr, p.permuted[1].sdr]).into_iter());

    let report = EvalReport {
        mode: mode.name().to_string(),
        filter_len,
        n_pairs: pair_reports.len(),
        mean_sdr,
        stderr_sdr,
        mean_sir,
        mean_sar,
        mean_nsdr,
        mean_perm_sdr,
        pairs: pair_reports,
    };

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("eval_report.json"), serde_json::to_string_pretty(&report)?)?;
    let class_name = |c: usize| {
        corpus.config.classes.get(c).map_or_else(|| format!("class{c}"), |s| s.name.clone())
    };
    let records: Vec<ScoreRecord> = report
        .pairs
        .iter()
        .flat_map(|p| {
            (0..2).map(|i| {
                ScoreRecord::new(p.pair_id.clone(), class_name(p.classes[i]), &p.grounded[i])
            })
        })
        .collect();
    write_score_records(&out_dir.join("scores.json"), &records)?;
    fs::write(out_dir.join("aggregate.csv"), aggregate_csv(&records))?;
    Ok(report)
}
