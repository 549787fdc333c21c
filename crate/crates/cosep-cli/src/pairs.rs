//! Test-mixture construction: pair up held-out solo clips of distinct
//! classes, the same protocol used for validation probes during training
//! and for final evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cosep_core::cotrain::ClipAudio;
use cosep_core::dsp::Waveform;

use crate::CliError;

/// Enumerate every cross-class solo pair in deterministic order: class
/// pairs ascending, clip combinations in manifest order. With k classes
/// of m solo clips each this yields m² · k(k−1)/2 pairs.
pub fn solo_pairs(clips: &[ClipAudio]) -> Vec<(usize, usize)> {
    let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        if let [class] = c.tags[..] {
            match by_class.iter_mut().find(|(k, _)| *k == class) {
                Some((_, v)) => v.push(i),
                None => by_class.push((class, vec![i])),
            }
        }
    }
    by_class.sort_by_key(|(k, _)| *k);

    let mut pairs = Vec::new();
    for i in 0..by_class.len() {
        for j in i + 1..by_class.len() {
            for &a in &by_class[i].1 {
                for &b in &by_class[j].1 {
                    pairs.push((a, b));
                }
            }
        }
    }
    pairs
}

/// Keep at most `max` pairs, drawn by seeded shuffle so reruns agree;
/// `max` = 0 keeps everything. Surviving pairs stay in enumeration order.
pub fn subsample(mut pairs: Vec<(usize, usize)>, max: usize, seed: u64) -> Vec<(usize, usize)> {
    if max == 0 || pairs.len() <= max {
        return pairs;
    }
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pairs.truncate(max);
    pairs.sort_unstable();
    pairs
}

/// Truncate to the common scoring length.
pub fn trim(w: &Waveform, len: usize) -> Result<Waveform, CliError> {
    Ok(Waveform::new(w.samples[..len.min(w.samples.len())].to_vec(), w.sample_rate)?)
}

/// Elementwise sum of two equal-length clips.
pub fn mix(a: &Waveform, b: &Waveform) -> Result<Waveform, CliError> {
    if a.sample_rate != b.sample_rate || a.len() != b.len() {
        return Err(CliError::Config(format!(
            "cannot mix clips of {} samples @ {} Hz and {} samples @ {} Hz",
            a.len(),
            a.sample_rate,
            b.len(),
            b.sample_rate
        )));
    }
    let samples = a.samples.iter().zip(&b.samples).map(|(x, y)| x + y).collect();
    Ok(Waveform::new(samples, a.sample_rate)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(id: &str, tags: &[usize]) -> ClipAudio {
        ClipAudio {
            id: id.into(),
            tags: tags.to_vec(),
            audio: Waveform::new(vec![0.1; 2048], 11025).unwrap(),
        }
    }

    #[test]
    fn pair_count_matches_the_pairing_arithmetic() {
        // 3 classes × 2 solos each (+ one duet that must be ignored):
        // 2² · 3·2/2 = 12 pairs.
        let clips = vec![
            clip("a0", &[0]),
            clip("a1", &[0]),
            clip("b0", &[1]),
            clip("b1", &[1]),
            clip("c0", &[2]),
            clip("c1", &[2]),
            clip("duet", &[0, 1]),
        ];
        let pairs = solo_pairs(&clips);
        assert_eq!(pairs.len(), 12);
        // Distinct classes in every pair, duet never used.
        for &(a, b) in &pairs {
            assert_ne!(clips[a].tags[0], clips[b].tags[0]);
            assert!(a != 6 && b != 6);
        }
    }

    #[test]
    fn subsample_is_deterministic_and_a_subset() {
        let all: Vec<(usize, usize)> = (0..20).map(|i| (i, i + 100)).collect();
        let s1 = subsample(all.clone(), 7, 5);
        let s2 = subsample(all.clone(), 7, 5);
        assert_eq!(s1, s2);
        assert_eq!(s1.len(), 7);
        assert!(s1.iter().all(|p| all.contains(p)));
        assert_eq!(subsample(all.clone(), 0, 5), all);
    }
}
