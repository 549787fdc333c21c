//! Single-batch forward pass on the autodiff graph: warped spectrograms,
//! per-object masks, the co-separation and consistency losses, and their
//! combination per loss mode.

use crate::dsp::{gt_ratio_masks, log_warp, stft, DEFAULT_HOP, DEFAULT_WINDOW};
use crate::sepnet::{Conditioning, SepModel};
use crate::tensor::{Graph, GraphParams, NodeId, Tensor, TensorError};

use super::{CotrainError, LossMode, TrainingPair};

/// Scalar loss values for one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLosses {
    pub cosep: f64,
    pub consistency: f64,
    pub total: f64,
}

/// Everything produced by one forward pass over a batch of pairs. Object
/// rows run pair by pair, video 1 before video 2, in list order.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Predicted ratio masks [n_objects, 1, S, S].
    pub masks: Tensor,
    /// Masked warped mixture magnitudes [n_objects, 1, S, S].
    pub separated: Tensor,
    /// Classifier outputs [n_objects, n_classes].
    pub logits: Tensor,
    /// Conditioning class per object row (adaptable entries use the extra
    /// class index).
    pub labels: Vec<usize>,
    pub losses: BatchLosses,
}

/// Video-level co-separation penalty, averaged over pairs. For each video
/// the masks of its objects are summed and compared to the video's ratio
/// mask under per-pixel weights; a pair contributes the sum of its two
/// videos' pixel means.
///
/// `masks` is [n_objects,1,S,S]; `groups` lists, per video (two entries
/// per pair), the mask rows belonging to it; `targets` and `weights` are
/// [n_videos,1,S,S] aligned with `groups`. The weighted-L1 node averages
/// over all video grids at once, so doubling recovers the mean over pairs
/// of the two-term sum.
pub fn cosep_loss(
    g: &mut Graph,
    masks: NodeId,
    groups: &[Vec<usize>],
    targets: NodeId,
    weights: NodeId,
) -> Result<NodeId, TensorError> {
    let sums = g.batch_select_sum(masks, groups)?;
    let l1 = g.weighted_l1(sums, targets, weights)?;
    Ok(g.scale(l1, 2.0))
}

/// Mean cross-entropy of every separated spectrogram's logits against its
/// conditioning label. Adaptable entries carry the extra class label and
/// count in the mean like any other object.
pub fn consistency_loss(
    g: &mut Graph,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId, TensorError> {
    g.softmax_cross_entropy(logits, labels)
}

pub(super) struct BatchGraph {
    pub g: Graph,
    pub gp: GraphParams,
    pub total: NodeId,
    pub out: BatchOutput,
}

/// Build the full batch graph: per-pair warped mixture magnitudes repeated
/// per object, mask prediction, both losses, and the mode-selected total.
/// In cosep-only mode the classifier runs frozen (eval mode, not bound to
/// the optimizer) so it still reports a consistency value without ever
/// receiving updates.
pub(super) fn batch_forward(
    model: &mut SepModel,
    pairs: &[TrainingPair],
    lambda: f64,
    mode: LossMode,
    train: bool,
) -> Result<BatchGraph, CotrainError> {
    if pairs.is_empty() {
        return Err(CotrainError::BadConfig("empty batch".into()));
    }
    let s = model.config.spec_size;
    let px = s * s;
    let n_objects: usize = pairs.iter().map(|p| p.n_objects()).sum();

    let mut x_data = Vec::with_capacity(n_objects * px);
    let mut targets = Vec::with_capacity(pairs.len() * 2 * px);
    let mut weights = Vec::with_capacity(pairs.len() * 2 * px);
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(pairs.len() * 2);
    let mut conds = Vec::with_capacity(n_objects);
    let mut labels = Vec::with_capacity(n_objects);

    let mut next_row = 0usize;
    for p in pairs {
        let mix = log_warp(&stft(&p.mixture, DEFAULT_WINDOW, DEFAULT_HOP)?.magnitude(), s)?;
        let w1 = log_warp(&stft(&p.x1, DEFAULT_WINDOW, DEFAULT_HOP)?.magnitude(), s)?;
        let w2 = log_warp(&stft(&p.x2, DEFAULT_WINDOW, DEFAULT_HOP)?.magnitude(), s)?;
        let (m1, m2) = gt_ratio_masks(&w1, &w2)?;
        let mean = mix.grid.data().iter().sum::<f64>() / px as f64;
        let wgrid: Vec<f64> = mix.grid.data().iter().map(|&v| v / mean).collect();

        groups.push((next_row..next_row + p.objects1.len()).collect());
        next_row += p.objects1.len();
        groups.push((next_row..next_row + p.objects2.len()).collect());
        next_row += p.objects2.len();
        for obj in p.objects1.iter().chain(&p.objects2) {
            x_data.extend_from_slice(mix.grid.data());
            conds.push(Conditioning::Class(obj.class_id));
            labels.push(obj.class_id);
        }
        targets.extend_from_slice(m1.grid.data());
        targets.extend_from_slice(m2.grid.data());
        weights.extend_from_slice(&wgrid);
        weights.extend_from_slice(&wgrid);
    }

    let mut g = Graph::new();
    let mut gp = GraphParams::new();
    let x = g.constant(Tensor::new(vec![n_objects, 1, s, s], x_data)?);
    let cond = model.condition_batch(&mut g, &mut gp, &conds)?;
    let masks = model.separate_batch(&mut g, &mut gp, x, cond, train)?;
    let tgt = g.constant(Tensor::new(vec![groups.len(), 1, s, s], targets)?);
    let wgt = g.constant(Tensor::new(vec![groups.len(), 1, s, s], weights)?);
    let cosep = cosep_loss(&mut g, masks, &groups, tgt, wgt)?;
    let separated = g.mul(masks, x)?;

    let mut frozen_gp = GraphParams::new();
    let (clf_gp, clf_train) = match mode {
        LossMode::CosepOnly => (&mut frozen_gp, false),
        _ => (&mut gp, train),
    };
    let (logits, _feats) = model.classify_batch(&mut g, clf_gp, separated, clf_train)?;
    let consistency = consistency_loss(&mut g, logits, &labels)?;

    let total = match mode {
        LossMode::CosepOnly => cosep,
        LossMode::ConsistencyOnly => consistency,
        LossMode::Full => {
            let weighted = g.scale(consistency, lambda);
            g.add(cosep, weighted)?
        }
    };

    let losses = BatchLosses {
        cosep: g.value(cosep).item()?,
        consistency: g.value(consistency).item()?,
        total: g.value(total).item()?,
    };
    let out = BatchOutput {
        masks: g.value(masks).clone(),
        separated: g.value(separated).clone(),
        logits: g.value(logits).clone(),
        labels,
        losses,
    };
    Ok(BatchGraph { g, gp, total, out })
}

#[cfg(test)]
mod tests {
    use super::super::make_pair;
    use super::super::pair::{crop_samples, ClipAudio};
    use super::*;
    use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE};
    use crate::sepnet::SepnetConfig;

    fn grids(values: &[f64], px: usize) -> Tensor {
        let mut data = Vec::new();
        for &v in values {
            data.extend(std::iter::repeat(v).take(px));
        }
        Tensor::new(vec![values.len(), 1, 2, 2], data).unwrap()
    }

    /// 2x2 grids, unit weights: video 1's two masks overshoot its target
    /// by 0.25 everywhere, video 2 is exact.
    #[test]
    fn hand_example_quarter_offset() {
        let mut g = Graph::new();
        let masks = g.constant(grids(&[0.375, 0.375, 0.4], 4));
        let targets = g.constant(grids(&[0.5, 0.4], 4));
        let weights = g.constant(grids(&[1.0, 1.0], 4));
        let groups = vec![vec![0, 1], vec![2]];
        let loss = cosep_loss(&mut g, masks, &groups, targets, weights).unwrap();
        assert!((g.value(loss).item().unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn exact_masks_zero_loss_and_nonzero_otherwise() {
        let mut g = Graph::new();
        let masks = g.constant(grids(&[0.25, 0.25, 0.4], 4));
        let targets = g.constant(grids(&[0.5, 0.4], 4));
        let weights = g.constant(grids(&[1.3, 0.7], 4));
        let loss =
            cosep_loss(&mut g, masks, &[vec![0, 1], vec![2]], targets, weights).unwrap();
        assert_eq!(g.value(loss).item().unwrap(), 0.0);

        // any deviation under positive weights makes it strictly positive
        let masks = g.constant(grids(&[0.25, 0.25, 0.41], 4));
        let loss =
            cosep_loss(&mut g, masks, &[vec![0, 1], vec![2]], targets, weights).unwrap();
        assert!(g.value(loss).item().unwrap() > 0.0);
    }

    #[test]
    fn video_label_swap_is_symmetric() {
        let mut g = Graph::new();
        let masks = g.constant(grids(&[0.3, 0.2, 0.6], 4));
        let t_a = g.constant(grids(&[0.7, 0.5], 4));
        let w_a = g.constant(grids(&[1.5, 0.5], 4));
        let a = cosep_loss(&mut g, masks, &[vec![0, 1], vec![2]], t_a, w_a).unwrap();

        let swapped = g.constant(grids(&[0.6, 0.3, 0.2], 4));
        let t_b = g.constant(grids(&[0.5, 0.7], 4));
        let w_b = g.constant(grids(&[0.5, 1.5], 4));
        let b = cosep_loss(&mut g, swapped, &[vec![0], vec![1, 2]], t_b, w_b).unwrap();
        assert!((g.value(a).item().unwrap() - g.value(b).item().unwrap()).abs() < 1e-15);
    }

    /// Without an adaptable mask, untagged background energy leaves a
    /// floor under the loss: the best object-only masks sum to the object
    /// ratio, which misses the background's share of the video mask.
    #[test]
    fn background_energy_bounds_loss_below() {
        // video 1 energy = 0.8 object + 0.2 background, video 2 = 1.0
        let mut g = Graph::new();
        let best_object_mask = 0.8 / 2.0;
        let masks = g.constant(grids(&[best_object_mask, 0.5], 4));
        let targets = g.constant(grids(&[(0.8 + 0.2) / 2.0, 0.5], 4));
        let weights = g.constant(grids(&[1.0, 1.0], 4));
        let loss =
            cosep_loss(&mut g, masks, &[vec![0], vec![1]], targets, weights).unwrap();
        let background_mass = 0.2 / 2.0;
        assert!((g.value(loss).item().unwrap() - background_mass).abs() < 1e-15);
        assert!(g.value(loss).item().unwrap() > 0.0);
    }

    #[test]
    fn consistency_examples() {
        let mut g = Graph::new();
        // saturated: +30 logit on the true class
        let mut row = vec![0.0; 8];
        row[3] = 30.0;
        let logits = g.constant(Tensor::new(vec![1, 8], row).unwrap());
        let loss = consistency_loss(&mut g, logits, &[3]).unwrap();
        assert!(g.value(loss).item().unwrap() < 1e-9);

        // uniform over 16 classes
        let logits = g.constant(Tensor::new(vec![1, 16], vec![0.25; 16]).unwrap());
        let loss = consistency_loss(&mut g, logits, &[11]).unwrap();
        assert!((g.value(loss).item().unwrap() - (16.0f64).ln()).abs() < 1e-12);

        // batch of two returns the mean of the per-example losses
        let r1 = vec![1.0, -0.5, 0.25, 2.0];
        let r2 = vec![-2.0, 0.5, 1.5, 0.0];
        let l1_node = g.constant(Tensor::new(vec![1, 4], r1.clone()).unwrap());
        let l2_node = g.constant(Tensor::new(vec![1, 4], r2.clone()).unwrap());
        let a = consistency_loss(&mut g, l1_node, &[0]).unwrap();
        let b = consistency_loss(&mut g, l2_node, &[2]).unwrap();
        let both = g.constant(Tensor::new(vec![2, 4], [r1, r2].concat()).unwrap());
        let ab = consistency_loss(&mut g, both, &[0, 2]).unwrap();
        let mean =
            (g.value(a).item().unwrap() + g.value(b).item().unwrap()) / 2.0;
        assert!((g.value(ab).item().unwrap() - mean).abs() < 1e-12);

        // label out of range
        let bad = g.constant(Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap());
        assert!(consistency_loss(&mut g, bad, &[4]).is_err());
    }

    fn tone_clip(id: &str, tags: &[usize], freq: f64) -> ClipAudio {
        let sr = DEFAULT_SAMPLE_RATE as f64;
        let len = crop_samples(16) + 5000;
        let samples: Vec<f64> = (0..len)
            .map(|i| 0.1 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin())
            .collect();
        ClipAudio {
            id: id.into(),
            tags: tags.to_vec(),
            audio: Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap(),
        }
    }

    fn tiny_model(seed: u64) -> SepModel {
        let config = SepnetConfig {
            spec_size: 16,
            base_channels: 8,
            cond_dim: 4,
            n_classes: 4,
            log_input: true,
            cond_lr_scale: 0.1,
        };
        SepModel::new(config, seed).unwrap()
    }

    fn tiny_pairs() -> Vec<TrainingPair> {
        let a = tone_clip("a", &[0, 2], 220.0);
        let b = tone_clip("b", &[1], 523.0);
        vec![
            make_pair(&a, &b, 16, true, 3, 5).unwrap(),
            make_pair(&b, &a, 16, false, 3, 6).unwrap(),
        ]
    }

    #[test]
    fn batch_forward_shapes_and_total() {
        let mut model = tiny_model(1);
        let pairs = tiny_pairs();
        let n_objects: usize = pairs.iter().map(|p| p.n_objects()).sum();
        assert_eq!(n_objects, 5 + 3);
        let bg = batch_forward(&mut model, &pairs, 0.05, LossMode::Full, true).unwrap();
        assert_eq!(bg.out.masks.shape(), &[8, 1, 16, 16]);
        assert_eq!(bg.out.separated.shape(), &[8, 1, 16, 16]);
        assert_eq!(bg.out.logits.shape(), &[8, 4]);
        assert_eq!(bg.out.labels, vec![0, 2, 3, 1, 3, 1, 0, 2]);
        let l = bg.out.losses;
        for v in [l.cosep, l.consistency, l.total] {
            assert!(v.is_finite() && v >= 0.0);
        }
        assert!((l.total - (l.cosep + 0.05 * l.consistency)).abs() < 1e-15);
    }

    /// For fixed network outputs the total is affine in lambda:
    /// L(l2) - L(l1) = (l2 - l1) * consistency.
    #[test]
    fn total_is_monotone_in_lambda()
    {
        let pairs = tiny_pairs();
        let model = tiny_model(1);
        let run = |lambda: f64| {
            let mut m = model.clone();
            let bg = batch_forward(&mut m, &pairs, lambda, LossMode::Full, false).unwrap();
            bg.out.losses
        };
        let l1 = run(0.05);
        let l2 = run(0.9);
        assert_eq!(l1.consistency, l2.consistency);
        assert!(((l2.total - l1.total) - (0.9 - 0.05) * l1.consistency).abs() < 1e-12);
        assert!(l2.total > l1.total);
    }

    #[test]
    fn reduced_modes_pick_their_term() {
        let pairs = tiny_pairs();
        let model = tiny_model(1);
        let mut m1 = model.clone();
        let a = batch_forward(&mut m1, &pairs, 0.05, LossMode::CosepOnly, false).unwrap();
        assert_eq!(a.out.losses.total, a.out.losses.cosep);
        let mut m2 = model.clone();
        let b =
            batch_forward(&mut m2, &pairs, 0.05, LossMode::ConsistencyOnly, false).unwrap();
        assert_eq!(b.out.losses.total, b.out.losses.consistency);
    }
}
