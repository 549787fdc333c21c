//! The optimization loop: epoch-shuffled clip pairing, one Adam step per
//! batch, JSONL step logging, periodic checkpoints, and an end-of-run
//! summary.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pair::{make_pair, ClipAudio, TrainingPair};
use super::step::{batch_forward, BatchOutput};
use super::{CotrainError, LossMode, TrainConfig};
use crate::sepnet::SepModel;
use crate::tensor::{adam_step, AdamConfig, AdamState};

/// One training-log line; the field order is the log schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub cosep: f64,
    pub consistency: f64,
    pub total: f64,
    pub lr: f64,
}

/// End-of-run metrics written next to the final checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub loss_mode: LossMode,
    pub lambda: f64,
    pub final_cosep: f64,
    pub final_consistency: f64,
    pub final_total: f64,
    pub mean_total_first_100: f64,
    pub mean_total_last_100: f64,
    pub wall_secs: f64,
}

pub struct Trainer {
    model: SepModel,
    pub cfg: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    clips: Vec<ClipAudio>,
    order: Vec<usize>,
    pos: usize,
    pub step: u64,
}

impl Trainer {
    pub fn new(
        model: SepModel,
        cfg: TrainConfig,
        clips: Vec<ClipAudio>,
    ) -> Result<Self, CotrainError> {
        cfg.validate()?;
        if clips.len() < 2 {
            return Err(CotrainError::NotEnoughClips(clips.len()));
        }
        let order: Vec<usize> = (0..clips.len()).collect();
        let pos = order.len(); // forces a shuffle on the first draw
        Ok(Trainer {
            model,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            adam: AdamState::new(),
            clips,
            order,
            pos,
            step: 0,
        })
    }

    pub fn model(&self) -> &SepModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut SepModel {
        &mut self.model
    }

    pub fn into_model(self) -> SepModel {
        self.model
    }

    /// Next clip index under uniform-without-replacement-per-epoch
    /// sampling: a shuffled pass over all clips, reshuffled when spent.
    fn next_clip_index(&mut self) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }

    fn next_pair(&mut self) -> Result<TrainingPair, CotrainError> {
        let a = self.next_clip_index();
        let mut b = self.next_clip_index();
        if b == a {
            // only possible straddling an epoch boundary; the next draw
            // differs because each index appears once per epoch
            b = self.next_clip_index();
        }
        let pair_seed = self.rng.gen::<u64>();
        make_pair(
            &self.clips[a],
            &self.clips[b],
            self.model.config.spec_size,
            self.cfg.use_adaptable,
            self.model.config.adaptable_class(),
            pair_seed,
        )
    }

    pub fn sample_batch(&mut self) -> Result<Vec<TrainingPair>, CotrainError> {
        (0..self.cfg.batch_pairs).map(|_| self.next_pair()).collect()
    }

    /// Draw a batch and apply one optimization step.
    pub fn train_step(&mut self) -> Result<BatchOutput, CotrainError> {
        let pairs = self.sample_batch()?;
        self.train_step_on(&pairs)
    }

    /// One optimization step on the given pairs. A non-finite loss aborts
    /// with diagnostics before any parameter is touched.
    pub fn train_step_on(&mut self, pairs: &[TrainingPair]) -> Result<BatchOutput, CotrainError> {
        self.step += 1;
        let bg = batch_forward(&mut self.model, pairs, self.cfg.lambda, self.cfg.loss_mode, true)?;
        let losses = bg.out.losses;
        if ![losses.cosep, losses.consistency, losses.total].iter().all(|v| v.is_finite()) {
            let pair_ids: Vec<String> =
                pairs.iter().map(|p| format!("{}+{}", p.clip1_id, p.clip2_id)).collect();
            return Err(CotrainError::NonFiniteLoss {
                step: self.step,
                pair_ids: pair_ids.join(", "),
                cosep: losses.cosep,
                consistency: losses.consistency,
            });
        }
        let g = bg.g;
        let grads = g.backward(bg.total)?;
        let adam_cfg = AdamConfig {
            lr: self.cfg.lr,
            weight_decay: self.cfg.weight_decay,
            ..AdamConfig::default()
        };
        adam_step(&mut self.model.params, &bg.gp, &grads, &mut self.adam, &adam_cfg)?;
        Ok(bg.out)
    }

    /// Run `cfg.steps` optimization steps, writing one JSON line per step
    /// to `log`. When `out_dir` is given, checkpoints land there every
    /// `cfg.checkpoint_every` steps plus a final model and summary.
    pub fn run(
        &mut self,
        log: &mut dyn Write,
        out_dir: Option<&Path>,
    ) -> Result<RunSummary, CotrainError> {
        let t0 = Instant::now();
        let mut totals = Vec::with_capacity(self.cfg.steps);
        let mut last = None;
        for _ in 0..self.cfg.steps {
            let out = self.train_step()?;
            totals.push(out.losses.total);
            let rec = StepRecord {
                step: self.step,
                cosep: out.losses.cosep,
                consistency: out.losses.consistency,
                total: out.losses.total,
                lr: self.cfg.lr,
            };
            serde_json::to_writer(&mut *log, &rec)?;
            log.write_all(b"\n")?;
            last = Some(out.losses);
            if let Some(dir) = out_dir {
                if self.cfg.checkpoint_every > 0
                    && self.step % self.cfg.checkpoint_every as u64 == 0
                {
                    self.model.save(&dir.join(format!("ckpt_{:06}.json", self.step)))?;
                }
            }
        }
        let window = totals.len().min(100);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        let last = last.ok_or_else(|| CotrainError::BadConfig("steps must be >= 1".into()))?;
        let summary = RunSummary {
            steps: self.step,
            loss_mode: self.cfg.loss_mode,
            lambda: self.cfg.lambda,
            final_cosep: last.cosep,
            final_consistency: last.consistency,
            final_total: last.total,
            mean_total_first_100: mean(&totals[..window]),
            mean_total_last_100: mean(&totals[totals.len() - window..]),
            wall_secs: t0.elapsed().as_secs_f64(),
        };
        if let Some(dir) = out_dir {
            self.model.save(&dir.join("model_final.json"))?;
            let file = std::fs::File::create(dir.join("summary.json"))?;
            serde_json::to_writer_pretty(file, &summary)?;
        }
        Ok(summary)
    }
}
