//! `cosep train`: the serialized optimization loop plus periodic
//! validation probes. Emits a per-step JSONL log, periodic checkpoints,
//! the final model, the best-validation model, and a run summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cosep_core::bsseval::bss_eval;
use cosep_core::corpus::{load_corpus, Corpus, Split};
use cosep_core::cotrain::{crop_samples, ClipAudio, LossMode, StepRecord, Trainer};
use cosep_core::dsp::Waveform;
use cosep_core::sepnet::SepModel;

use crate::config::EvalConfig;
use crate::pairs::{mix, solo_pairs, subsample};
use crate::sep::separate_clip;
use crate::{CliError, ExperimentConfig};

/// End-of-run metrics; `Option` fields are absent for zero-step runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub loss_mode: LossMode,
    pub lambda: f64,
    pub final_cosep: Option<f64>,
    pub final_consistency: Option<f64>,
    pub final_total: Option<f64>,
    pub mean_total_first_100: Option<f64>,
    pub mean_total_last_100: Option<f64>,
    pub best_val_sdr: Option<f64>,
    pub best_val_step: Option<u64>,
    pub wall_secs: f64,
}

#[derive(Serialize)]
struct ValRecord {
    step: u64,
    val_sdr: f64,
}

/// One fixed validation mixture: a centered window crop from each of two
/// held-out solo clips of distinct classes.
struct ValProbe {
    mixture: Waveform,
    refs: [Waveform; 2],
    classes: [usize; 2],
}

fn build_probes(
    corpus: &Corpus,
    spec_size: usize,
    eval: &EvalConfig,
) -> Result<Vec<ValProbe>, CliError> {
    if eval.validate_every == 0 || eval.val_pairs == 0 {
        return Ok(Vec::new());
    }
    let clips = ClipAudio::from_corpus(corpus, Split::Val)?;
    let pairs = subsample(solo_pairs(&clips), eval.val_pairs, eval.pairs_seed);
    let crop_len = crop_samples(spec_size);
    let centered = |c: &ClipAudio| -> Result<Waveform, CliError> {
        let offset = (c.audio.len().saturating_sub(crop_len)) / 2;
        Ok(Waveform::new(
            c.audio.samples[offset..offset + crop_len].to_vec(),
            c.audio.sample_rate,
        )?)
    };
    pairs
        .into_iter()
        .map(|(a, b)| {
            let (a, b) = (&clips[a], &clips[b]);
            let (wa, wb) = (centered(a)?, centered(b)?);
            let mixture = mix(&wa, &wb)?;
            Ok(ValProbe { mixture, refs: [wa, wb], classes: [a.tags[0], b.tags[0]] })
        })
        .collect()
}

/// Mean grounded SDR over the probe set.
fn probe_sdr(model: &mut SepModel, probes: &[ValProbe], filter_len: usize) -> Result<f64, CliError> {
    let mut sum = 0.0;
    let mut n = 0;
    for p in probes {
        let ests = separate_clip(model, &p.mixture, &p.classes)?;
        let scores = bss_eval(&ests, &p.refs, filter_len)?;
        for s in &scores {
            sum += s.sdr;
            n += 1;
        }
    }
    Ok(sum / n.max(1) as f64)
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    corpus_dir: &Path,
    out_dir: &Path,
) -> Result<TrainSummary, CliError> {
    let t0 = Instant::now();
    let corpus = load_corpus(corpus_dir)?;
    if corpus.config.classes.len() + 1 != cfg.sepnet.n_classes {
        return Err(CliError::ClassMismatch {
            corpus: corpus.config.classes.len(),
            model: cfg.sepnet.n_classes,
        });
    }
    fs::create_dir_all(out_dir)?;
    cfg.save(&out_dir.join("config.json"))?;

    let model = SepModel::new(cfg.sepnet.clone(), cfg.train.seed)?;
    let mut log = BufWriter::new(File::create(out_dir.join("train_log.jsonl"))?);
    let mut val_log = BufWriter::new(File::create(out_dir.join("val_log.jsonl"))?);

    let mut summary = TrainSummary {
        steps: 0,
        loss_mode: cfg.train.loss_mode,
        lambda: cfg.train.lambda,
        final_cosep: None,
        final_consistency: None,
        final_total: None,
        mean_total_first_100: None,
        mean_total_last_100: None,
        best_val_sdr: None,
        best_val_step: None,
        wall_secs: 0.0,
    };

    if cfg.train.steps == 0 {
        eprintln!("warning: train.steps = 0, emitting an untrained checkpoint");
        model.save(&out_dir.join("model_final.json"))?;
        model.save(&out_dir.join("model_best.json"))?;
        summary.wall_secs = t0.elapsed().as_secs_f64();
        fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        return Ok(summary);
    }

    let probes = build_probes(&corpus, cfg.sepnet.spec_size, &cfg.eval)?;
    let clips = ClipAudio::from_corpus(&corpus, Split::Train)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), clips)?;

    let mut totals = Vec::with_capacity(cfg.train.steps);
    let mut last = None;
    for _ in 0..cfg.train.steps {
        let out = trainer.train_step()?;
        let rec = StepRecord {
            step: trainer.step,
            cosep: out.losses.cosep,
            consistency: out.losses.consistency,
            total: out.losses.total,
            lr: cfg.train.lr,
        };
        serde_json::to_writer(&mut log, &rec)?;
        log.write_all(b"\n")?;
        totals.push(out.losses.total);
        last = Some(out.losses);

        if cfg.train.checkpoint_every > 0 && trainer.step % cfg.train.checkpoint_every as u64 == 0
        {
            trainer.model().save(&out_dir.join(format!("ckpt_{:06}.json", trainer.step)))?;
        }
        if !probes.is_empty() && trainer.step % cfg.eval.validate_every as u64 == 0 {
            let step = trainer.step;
            let sdr = probe_sdr(trainer.model_mut(), &probes, cfg.eval.val_filter_len)?;
            serde_json::to_writer(&mut val_log, &ValRecord { step, val_sdr: sdr })?;
            val_log.write_all(b"\n")?;
            if summary.best_val_sdr.is_none_or(|best| sdr > best) {
                summary.best_val_sdr = Some(sdr);
                summary.best_val_step = Some(step);
                trainer.model().save(&out_dir.join("model_best.json"))?;
            }
        }
    }
    log.flush()?;
    val_log.flush()?;

    let window = totals.len().min(100);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let last = last.expect("steps >= 1");
    summary.steps = trainer.step;
    summary.final_cosep = Some(last.cosep);
    summary.final_consistency = Some(last.consistency);
    summary.final_total = Some(last.total);
    summary.mean_total_first_100 = Some(mean(&totals[..window]));
    summary.mean_total_last_100 = Some(mean(&totals[totals.len() - window..]));

    trainer.model().save(&out_dir.join("model_final.json"))?;
    if summary.best_val_sdr.is_none() {
        // No validation probes ran; the final model is the best we know of.
        trainer.model().save(&out_dir.join("model_best.json"))?;
    }
    summary.wall_secs = t0.elapsed().as_secs_f64();
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
