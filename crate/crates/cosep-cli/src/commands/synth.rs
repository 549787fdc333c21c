//! `cosep synth`: render the synthetic corpus and verify the on-disk
//! invariant (every mixture equals the sample-wise sum of its stems)
//! before declaring success.

use std::path::Path;

use cosep_core::corpus::{build_corpus, Corpus};

use crate::{CliError, ExperimentConfig};

pub fn cmd_synth(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Corpus, CliError> {
    let c = &cfg.corpus;
    if c.train_solos + c.train_duets + c.val_solos + c.test_solos == 0 {
        return Err(CliError::EmptyCorpus);
    }
    let corpus = build_corpus(c, out_dir)?;

    let mut bad = Vec::new();
    for clip in &corpus.clips {
        let mixture = corpus.load_mixture(clip)?;
        let stems = corpus.load_stems(clip)?;
        let mut sum = vec![0.0; mixture.len()];
        for (_, stem) in &stems {
            for (acc, v) in sum.iter_mut().zip(&stem.samples) {
                *acc += v;
            }
        }
        // Stems are snapped to the PCM grid before the mixture is summed,
        // so the comparison is exact, not approximate.
        if sum.len() != mixture.len() || sum.iter().zip(&mixture.samples).any(|(a, b)| a != b) {
            bad.push(clip.clip_id.clone());
        }
    }
    if !bad.is_empty() {
        return Err(CliError::CorruptClips { clip_ids: bad.join(", ") });
    }
    Ok(corpus)
}
