//! Training pair assembly: random aligned crops of two clips, mixed by
//! summation, with the object list of each clip derived from its tags.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CotrainError;
use crate::corpus::{Corpus, Split};
use crate::dsp::{Waveform, DEFAULT_HOP, DEFAULT_WINDOW};

/// Crops whose RMS falls below this are considered silent and resampled.
pub const SILENT_RMS: f64 = 1e-4;
const MAX_CROP_ATTEMPTS: usize = 64;

/// Number of raw samples whose STFT (window 1022, hop 256) yields exactly
/// `spec_size` frames, so one crop maps onto one square network input.
pub fn crop_samples(spec_size: usize) -> usize {
    (spec_size - 1) * DEFAULT_HOP + DEFAULT_WINDOW
}

/// A clip's mixture audio plus the class tags it carries.
#[derive(Debug, Clone)]
pub struct ClipAudio {
    pub id: String,
    pub tags: Vec<usize>,
    pub audio: Waveform,
}

impl ClipAudio {
    /// Load every clip of a split with its mixture track.
    pub fn from_corpus(corpus: &Corpus, split: Split) -> Result<Vec<ClipAudio>, CotrainError> {
        corpus
            .clips_in(split)
            .into_iter()
            .map(|m| {
                let audio = corpus.load_mixture(m)?;
                Ok(ClipAudio { id: m.clip_id.clone(), tags: m.tags.clone(), audio })
            })
            .collect()
    }
}

/// One conditioning target: a tagged class, or the adaptable slot that is
/// free to absorb untagged energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectRef {
    pub class_id: usize,
    pub adaptable: bool,
}

/// Two aligned crops and their mixture. Object lists hold one entry per
/// tag, plus one adaptable entry per clip when enabled.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub clip1_id: String,
    pub clip2_id: String,
    pub offset1: usize,
    pub offset2: usize,
    pub objects1: Vec<ObjectRef>,
    pub objects2: Vec<ObjectRef>,
    pub x1: Waveform,
    pub x2: Waveform,
    pub mixture: Waveform,
}

impl TrainingPair {
    pub fn n_objects(&self) -> usize {
        self.objects1.len() + self.objects2.len()
    }
}

fn objects_from_tags(
    clip: &ClipAudio,
    use_adaptable: bool,
    adaptable_class: usize,
) -> Result<Vec<ObjectRef>, CotrainError> {
    if clip.tags.is_empty() {
        return Err(CotrainError::NoObjects { clip_id: clip.id.clone() });
    }
    let mut objects: Vec<ObjectRef> =
        clip.tags.iter().map(|&t| ObjectRef { class_id: t, adaptable: false }).collect();
    if use_adaptable {
        objects.push(ObjectRef { class_id: adaptable_class, adaptable: true });
    }
    Ok(objects)
}

fn sample_crop(
    clip: &ClipAudio,
    crop_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, Waveform), CotrainError> {
    if clip.audio.len() < crop_len {
        return Err(CotrainError::ClipTooShort {
            clip_id: clip.id.clone(),
            len: clip.audio.len(),
            need: crop_len,
        });
    }
    let max_offset = clip.audio.len() - crop_len;
    for _ in 0..MAX_CROP_ATTEMPTS {
        let offset = rng.gen_range(0..=max_offset);
        let samples = clip.audio.samples[offset..offset + crop_len].to_vec();
        let crop = Waveform::new(samples, clip.audio.sample_rate)?;
        if crop.rms() >= SILENT_RMS {
            return Ok((offset, crop));
        }
    }
    Err(CotrainError::SilentClip {
        clip_id: clip.id.clone(),
        attempts: MAX_CROP_ATTEMPTS,
        threshold: SILENT_RMS,
    })
}

/// Draw aligned random crops from two clips and mix them. Crops with RMS
/// below [`SILENT_RMS`] are resampled; the same seed reproduces the same
/// offsets.
pub fn make_pair(
    clip1: &ClipAudio,
    clip2: &ClipAudio,
    spec_size: usize,
    use_adaptable: bool,
    adaptable_class: usize,
    seed: u64,
) -> Result<TrainingPair, CotrainError> {
    if clip1.audio.sample_rate != clip2.audio.sample_rate {
        return Err(CotrainError::SampleRateMismatch(
            clip1.audio.sample_rate,
            clip2.audio.sample_rate,
        ));
    }
    let objects1 = objects_from_tags(clip1, use_adaptable, adaptable_class)?;
    let objects2 = objects_from_tags(clip2, use_adaptable, adaptable_class)?;
    let crop_len = crop_samples(spec_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (offset1, x1) = sample_crop(clip1, crop_len, &mut rng)?;
    let (offset2, x2) = sample_crop(clip2, crop_len, &mut rng)?;
    let mixed: Vec<f64> =
        x1.samples.iter().zip(&x2.samples).map(|(&a, &b)| a + b).collect();
    let mixture = Waveform::new(mixed, x1.sample_rate)?;
    Ok(TrainingPair {
        clip1_id: clip1.id.clone(),
        clip2_id: clip2.id.clone(),
        offset1,
        offset2,
        objects1,
        objects2,
        x1,
        x2,
        mixture,
    })
}
