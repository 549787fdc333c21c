//! Corpus on disk: manifest.json + corpus_config.json at the root,
//! mixtures/ and stems/ holding 16-bit PCM WAVs. Stems are snapped to the
//! PCM grid before the mixture is summed, so the manifest invariant
//! (mixture == Σ stems) survives the disk round trip exactly.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{make_clip, quantize_pcm16};
use super::{default_classes, synth_detections, CorpusError, Detection, SourceClass};
use crate::dsp::{read_wav, write_wav, Waveform, DEFAULT_SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StemEntry {
    /// Class id for instrument stems, `None` for the background stem.
    pub class_id: Option<usize>,
    pub path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub split: Split,
    /// Class ids present, ascending; 1 entry for solos, 2 for duets.
    pub tags: Vec<usize>,
    pub mixture: String,
    pub stems: Vec<StemEntry>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub classes: Vec<SourceClass>,
    pub clip_secs: f64,
    pub sample_rate: u32,
    pub train_solos: usize,
    pub train_duets: usize,
    pub val_solos: usize,
    pub test_solos: usize,
    /// Pink-noise background SNR in dB below the instrument mix; `None`
    /// disables backgrounds.
    pub background_snr_db: Option<f64>,
    /// When set, this class never appears as a training solo and every
    /// training duet contains it (it still gets val/test solos).
    pub duet_only_class: Option<usize>,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            classes: default_classes(),
            clip_secs: 10.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            train_solos: 120,
            train_duets: 60,
            val_solos: 18,
            test_solos: 36,
            background_snr_db: None,
            duet_only_class: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub config: CorpusConfig,
    pub clips: Vec<ClipManifest>,
}

impl Corpus {
    pub fn clips_in(&self, split: Split) -> Vec<&ClipManifest> {
        self.clips.iter().filter(|c| c.split == split).collect()
    }

    pub fn load_mixture(&self, clip: &ClipManifest) -> Result<Waveform, CorpusError> {
        Ok(read_wav(&self.root.join(&clip.mixture))?)
    }

    pub fn load_stems(&self, clip: &ClipManifest) -> Result<Vec<(Option<usize>, Waveform)>, CorpusError> {
        clip.stems
            .iter()
            .map(|s| Ok((s.class_id, read_wav(&self.root.join(&s.path))?)))
            .collect()
    }
}

/// Tag plan for one split, round-robin so class histograms come out
/// uniform. `solo_pool` lists classes eligible for solos; duets pair
/// either all unordered class pairs or `duet_only` with rotating partners.
fn plan_tags(cfg: &CorpusConfig) -> Vec<(Split, Vec<usize>)> {
    let all: Vec<usize> = (0..cfg.classes.len()).collect();
    let solo_pool: Vec<usize> = match cfg.duet_only_class {
        Some(x) => all.iter().copied().filter(|&c| c != x).collect(),
        None => all.clone(),
    };
    let duet_pairs: Vec<Vec<usize>> = match cfg.duet_only_class {
        Some(x) => {
            let others: Vec<usize> = all.iter().copied().filter(|&c| c != x).collect();
            others
                .iter()
                .map(|&o| {
                    let mut pair = vec![x, o];
                    pair.sort_unstable();
                    pair
                })
                .collect()
        }
        None => {
            let mut pairs = Vec::new();
            for i in 0..all.len() {
                for j in i + 1..all.len() {
                    pairs.push(vec![all[i], all[j]]);
                }
            }
            pairs
        }
    };

    let mut plan = Vec::new();
    for i in 0..cfg.train_solos {
        plan.push((Split::Train, vec![solo_pool[i % solo_pool.len()]]));
    }
    for i in 0..cfg.train_duets {
        plan.push((Split::Train, duet_pairs[i % duet_pairs.len()].clone()));
    }
    for i in 0..cfg.val_solos {
        plan.push((Split::Val, vec![all[i % all.len()]]));
    }
    for i in 0..cfg.test_solos {
        plan.push((Split::Test, vec![all[i % all.len()]]));
    }
    plan
}

/// Render every clip in the plan, write WAVs and manifests under `root`,
/// and return the loaded corpus. Fully deterministic given the config.
pub fn build_corpus(cfg: &CorpusConfig, root: &Path) -> Result<Corpus, CorpusError> {
    if let Some(x) = cfg.duet_only_class {
        if x >= cfg.classes.len() {
            return Err(CorpusError::UnknownClass { class_id: x, n_classes: cfg.classes.len() });
        }
        if cfg.classes.len() < 2 {
            return Err(CorpusError::Manifest("duet_only_class needs at least 2 classes".into()));
        }
    }
    fs::create_dir_all(root.join("mixtures"))?;
    fs::create_dir_all(root.join("stems"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut clips = Vec::new();
    let mut counters = [0usize; 3];
    for (split, tags) in plan_tags(cfg) {
        let (prefix, slot) = match split {
            Split::Train => ("train", 0),
            Split::Val => ("val", 1),
            Split::Test => ("test", 2),
        };
        let clip_id = format!("{prefix}_{:04}", counters[slot]);
        counters[slot] += 1;

        let clip_seed: u64 = rng.gen();
        let mut rendered = make_clip(
            &cfg.classes,
            &tags,
            cfg.clip_secs,
            cfg.sample_rate,
            cfg.background_snr_db,
            clip_seed,
        )?;
        // Snap stems to the PCM grid and re-sum, so the on-disk mixture is
        // exactly the sum of the on-disk stems.
        let n = rendered.mixture.samples.len();
        let mut mix = vec![0.0; n];
        for (_, stem) in &mut rendered.stems {
            quantize_pcm16(stem);
            for (acc, s) in mix.iter_mut().zip(&stem.samples) {
                *acc += *s;
            }
        }
        let mixture = Waveform::new(mix, cfg.sample_rate)?;

        let mixture_rel = format!("mixtures/{clip_id}.wav");
        write_wav(&root.join(&mixture_rel), &mixture)?;
        let mut stems = Vec::new();
        for (k, (class_id, stem)) in rendered.stems.iter().enumerate() {
            let rel = format!("stems/{clip_id}_{k}.wav");
            write_wav(&root.join(&rel), stem)?;
            stems.push(StemEntry { class_id: *class_id, path: rel });
        }
        let detections = synth_detections(&rendered.tags, cfg.classes.len(), &mut rng);

        clips.push(ClipManifest {
            clip_id,
            duration_secs: cfg.clip_secs,
            sample_rate: cfg.sample_rate,
            split,
            tags: rendered.tags,
            mixture: mixture_rel,
            stems,
            detections,
        });
    }

    let manifest_json = serde_json::to_string_pretty(&clips)
        .map_err(|e| CorpusError::Manifest(e.to_string()))?;
    fs::write(root.join("manifest.json"), manifest_json)?;
    let cfg_json = serde_json::to_string_pretty(cfg)
        .map_err(|e| CorpusError::Manifest(e.to_string()))?;
    fs::write(root.join("corpus_config.json"), cfg_json)?;

    Ok(Corpus { root: root.to_path_buf(), config: cfg.clone(), clips })
}

pub fn load_corpus(root: &Path) -> Result<Corpus, CorpusError> {
    let manifest = fs::read_to_string(root.join("manifest.json"))?;
    let clips: Vec<ClipManifest> =
        serde_json::from_str(&manifest).map_err(|e| CorpusError::Manifest(e.to_string()))?;
    let cfg = fs::read_to_string(root.join("corpus_config.json"))?;
    let config: CorpusConfig =
        serde_json::from_str(&cfg).map_err(|e| CorpusError::Manifest(e.to_string()))?;
    Ok(Corpus { root: root.to_path_buf(), config, clips })
}
