//! Synthetic audio-visual corpus: parametric instrument classes, solo and
//! duet clips with hidden ground-truth stems, and detection-manifest
//! filtering. Tags and detections are manifest data standing in for a
//! video stream; no pixels exist anywhere.

mod detect;
mod store;
mod synth;

pub use detect::{filter_detections, iou, oracle, synth_detections, Detection};
pub use store::{build_corpus, load_corpus, ClipManifest, Corpus, CorpusConfig, Split, StemEntry};
pub use synth::{make_clip, synth_source, RenderedClip, DEFAULT_CLIP_SECS};

use serde::{Deserialize, Serialize};

use crate::dsp::DspError;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("clip needs 1 or 2 tags, got {0}")]
    BadTagCount(usize),
    #[error("class id {class_id} out of range (have {n_classes} classes)")]
    UnknownClass { class_id: usize, n_classes: usize },
    #[error("duplicate tag {0} in one clip")]
    DuplicateTag(usize),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One parametric instrument: harmonic recipe plus articulation. Classes
/// must stay timbrally distinguishable — see [`default_classes`] and the
/// pairwise-profile test below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceClass {
    pub id: usize,
    pub name: String,
    /// Hz interval the per-note fundamental is drawn from.
    pub fundamental_range: (f64, f64),
    /// Relative amplitude of harmonics 1..=K.
    pub harmonic_amplitudes: Vec<f64>,
    /// Attack ramp length in seconds.
    pub attack: f64,
    /// Exponential amplitude decay rate (per second) after the attack.
    pub decay: f64,
    /// Vibrato rate in Hz.
    pub vibrato_rate: f64,
    /// Vibrato depth as a relative frequency deviation.
    pub vibrato_depth: f64,
}

/// The six desk-scale classes. Fundamental ranges tile low-to-high
/// without overlap and harmonic profiles are pairwise far apart (at least
/// two coefficients differing by 0.2 or more).
pub fn default_classes() -> Vec<SourceClass> {
    let spec: [(&str, (f64, f64), [f64; 8], f64, f64, f64, f64); 6] = [
        // name, f0 range, harmonic profile, attack, decay, vib rate, vib depth
        ("strings", (98.0, 147.0), [1.00, 0.80, 0.65, 0.50, 0.40, 0.32, 0.25, 0.20], 0.040, 0.25, 5.0, 0.006),
        ("clarinet", (147.0, 220.0), [1.00, 0.05, 0.75, 0.05, 0.50, 0.05, 0.30, 0.05], 0.030, 0.20, 4.5, 0.004),
        ("horn", (262.0, 392.0), [0.60, 0.85, 1.00, 0.80, 0.60, 0.45, 0.30, 0.20], 0.050, 0.30, 4.0, 0.005),
        ("shawm", (392.0, 523.0), [0.40, 1.00, 0.30, 0.75, 0.25, 0.55, 0.15, 0.35], 0.020, 0.35, 5.5, 0.008),
        ("chime", (523.0, 784.0), [1.00, 0.00, 0.30, 0.00, 0.65, 0.00, 0.00, 0.45], 0.005, 1.20, 0.0, 0.000),
        ("flute", (784.0, 1175.0), [1.00, 0.50, 0.10, 0.05, 0.02, 0.01, 0.00, 0.00], 0.060, 0.15, 5.2, 0.007),
    ];
    spec.iter()
        .enumerate()
        .map(|(id, (name, f0, h, attack, decay, vr, vd))| SourceClass {
            id,
            name: name.to_string(),
            fundamental_range: *f0,
            harmonic_amplitudes: h.to_vec(),
            attack: *attack,
            decay: *decay,
            vibrato_rate: *vr,
            vibrato_depth: *vd,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Count harmonic coefficients differing by at least `gap`.
    fn profile_distance(a: &[f64], b: &[f64], gap: f64) -> usize {
        a.iter().zip(b).filter(|(x, y)| (**x - **y).abs() >= gap - 1e-12).count()
    }

    #[test]
    fn default_classes_are_pairwise_distinguishable() {
        let classes = default_classes();
        assert_eq!(classes.len(), 6);
        for i in 0..classes.len() {
            for j in i + 1..classes.len() {
                let d = profile_distance(
                    &classes[i].harmonic_amplitudes,
                    &classes[j].harmonic_amplitudes,
                    0.2,
                );
                assert!(
                    d >= 2,
                    "{} vs {}: only {d} coefficients differ by >= 0.2",
                    classes[i].name,
                    classes[j].name
                );
            }
        }
    }

    #[test]
    fn fundamental_ranges_are_ordered_and_disjoint() {
        let classes = default_classes();
        for c in &classes {
            assert!(c.fundamental_range.0 < c.fundamental_range.1, "{}", c.name);
        }
        let mut ranges: Vec<_> = classes.iter().map(|c| c.fundamental_range).collect();
        ranges.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in ranges.windows(2) {
            assert!(w[0].1 <= w[1].0, "ranges {:?} and {:?} overlap", w[0], w[1]);
        }
    }
}
