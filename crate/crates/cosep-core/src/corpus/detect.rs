//! Detection manifests and confidence/overlap filtering. Three rules, in
//! order: (1) keep confidence > 0.9; (2) among survivors, a detection is
//! dropped when a higher-confidence detection of a *different* class
//! overlaps it with IoU > 0.7 (ties keep the earlier list element);
//! (3) keep only the two classes whose maximum confidence is highest.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub confidence: f64,
    /// Normalized [x0, y0, x1, y1] with x0 < x1, y0 < y1.
    pub bbox: [f64; 4],
    pub frame_index: usize,
}

/// Intersection-over-union of two normalized boxes.
pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn filter_detections(ds: &[Detection]) -> Vec<Detection> {
    // Rule 1: confidence strictly above 0.9.
    let survivors: Vec<&Detection> = ds.iter().filter(|d| d.confidence > 0.9).collect();

    // Rule 2: cross-class suppression by overlap, judged against the full
    // rule-1 survivor set (not cascaded).
    let mut kept: Vec<&Detection> = Vec::new();
    for (j, d) in survivors.iter().enumerate() {
        let suppressed = survivors.iter().enumerate().any(|(i, e)| {
            i != j
                && e.class_id != d.class_id
                && iou(&e.bbox, &d.bbox) > 0.7
                && (e.confidence > d.confidence || (e.confidence == d.confidence && i < j))
        });
        if !suppressed {
            kept.push(d);
        }
    }

    // Rule 3: rank classes by maximum confidence (ties favor the class
    // appearing earlier in the kept list) and keep the top two.
    let mut class_best: Vec<(usize, f64)> = Vec::new();
    for d in &kept {
        match class_best.iter_mut().find(|(c, _)| *c == d.class_id) {
            Some((_, best)) => *best = best.max(d.confidence),
            None => class_best.push((d.class_id, d.confidence)),
        }
    }
    // Stable sort keeps first-occurrence order among equal confidences.
    class_best.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top: Vec<usize> = class_best.iter().take(2).map(|(c, _)| *c).collect();

    kept.into_iter().filter(|d| top.contains(&d.class_id)).cloned().collect()
}

/// Rule-by-rule reference filter, written independently of
/// [`filter_detections`] (separate IoU, cascade staging, and ranking code)
/// so tests and the acceptance gate can compare the production filter
/// against a second reading of the three rules.
pub mod oracle {
    use super::Detection;

    /// Independently written IoU: clip rectangles against each other.
    pub fn oracle_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
        let x0 = if a[0] > b[0] { a[0] } else { b[0] };
        let y0 = if a[1] > b[1] { a[1] } else { b[1] };
        let x1 = if a[2] < b[2] { a[2] } else { b[2] };
        let y1 = if a[3] < b[3] { a[3] } else { b[3] };
        let mut inter = 0.0;
        if x1 > x0 && y1 > y0 {
            inter = (x1 - x0) * (y1 - y0);
        }
        let ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
        if ua > 0.0 {
            inter / ua
        } else {
            0.0
        }
    }

    pub fn oracle_filter(ds: &[Detection]) -> Vec<Detection> {
        let mut stage1 = Vec::new();
        for d in ds {
            if d.confidence > 0.9 {
                stage1.push(d.clone());
            }
        }
        let mut stage2 = Vec::new();
        for (j, d) in stage1.iter().enumerate() {
            let mut dead = false;
            for (i, e) in stage1.iter().enumerate() {
                if i == j || e.class_id == d.class_id {
                    continue;
                }
                if oracle_iou(&e.bbox, &d.bbox) > 0.7 {
                    if e.confidence > d.confidence {
                        dead = true;
                    }
                    if e.confidence == d.confidence && i < j {
                        dead = true;
                    }
                }
            }
            if !dead {
                stage2.push(d.clone());
            }
        }
        let mut ranked: Vec<(usize, f64)> = Vec::new();
        for d in &stage2 {
            if let Some(slot) = ranked.iter_mut().find(|(c, _)| *c == d.class_id) {
                if d.confidence > slot.1 {
                    slot.1 = d.confidence;
                }
            } else {
                ranked.push((d.class_id, d.confidence));
            }
        }
        // selection sort, stable on ties
        let mut order: Vec<usize> = Vec::new();
        let mut used = vec![false; ranked.len()];
        for _ in 0..ranked.len() {
            let mut best: Option<usize> = None;
            for (idx, (_, conf)) in ranked.iter().enumerate() {
                if used[idx] {
                    continue;
                }
                match best {
                    None => best = Some(idx),
                    Some(b) if *conf > ranked[b].1 => best = Some(idx),
                    _ => {}
                }
            }
            let b = best.unwrap();
            used[b] = true;
            order.push(ranked[b].0);
        }
        order.truncate(2);
        stage2.into_iter().filter(|d| order.contains(&d.class_id)).collect()
    }
}

/// Generate a plausible detection list for a clip with the given tags:
/// confident boxes for each tagged class, plus structured distractors
/// (low-confidence clutter and cross-class decoys overlapping a tag box)
/// that the three filtering rules must remove. After filtering, the
/// surviving class set equals the tag set exactly.
pub fn synth_detections<R: Rng>(tags: &[usize], n_classes: usize, rng: &mut R) -> Vec<Detection> {
    let mut ds = Vec::new();
    let rand_box = |rng: &mut R| -> [f64; 4] {
        let cx: f64 = rng.gen_range(0.2..0.8);
        let cy: f64 = rng.gen_range(0.2..0.8);
        let hw: f64 = rng.gen_range(0.08..0.18);
        let hh: f64 = rng.gen_range(0.08..0.18);
        [
            (cx - hw).max(0.0),
            (cy - hh).max(0.0),
            (cx + hw).min(1.0),
            (cy + hh).min(1.0),
        ]
    };

    for &tag in tags {
        let n_boxes = rng.gen_range(2..=3);
        for b in 0..n_boxes {
            let bbox = rand_box(rng);
            let confidence = rng.gen_range(0.93..0.99);
            let frame_index = rng.gen_range(0..50);
            ds.push(Detection { class_id: tag, confidence, bbox, frame_index });

            if b == 0 {
                // Cross-class decoy on top of the first tag box: high IoU,
                // confidence above 0.9 but below every tag box, so rule 2
                // (not rule 1) must remove it.
                let mut other = rng.gen_range(0..n_classes - 1);
                if other >= tag {
                    other += 1;
                }
                let jx = 0.02 * (bbox[2] - bbox[0]);
                let decoy_box = [bbox[0] + jx, bbox[1], bbox[2] + jx, bbox[3]];
                ds.push(Detection {
                    class_id: other,
                    confidence: rng.gen_range(0.905..0.925),
                    bbox: decoy_box,
                    frame_index: rng.gen_range(0..50),
                });
            }
        }
    }

    // Low-confidence clutter of arbitrary class, removed by rule 1.
    for _ in 0..rng.gen_range(2..=4) {
        ds.push(Detection {
            class_id: rng.gen_range(0..n_classes),
            confidence: rng.gen_range(0.2..0.895),
            bbox: rand_box(rng),
            frame_index: rng.gen_range(0..50),
        });
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::oracle::oracle_filter;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(class_id: usize, confidence: f64, bbox: [f64; 4]) -> Detection {
        Detection { class_id, confidence, bbox, frame_index: 0 }
    }

    #[test]
    fn rule1_keeps_only_confident_same_class() {
        let ds = vec![det(3, 0.95, [0.1, 0.1, 0.4, 0.4]), det(3, 0.80, [0.5, 0.5, 0.8, 0.8])];
        let out = filter_detections(&ds);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].confidence, 0.95);
    }

    #[test]
    fn empty_list_passes_through() {
        assert!(filter_detections(&[]).is_empty());
    }

    #[test]
    fn rule2_drops_overlapping_cross_class_lower_confidence() {
        let a = det(0, 0.95, [0.1, 0.1, 0.5, 0.5]);
        let b = det(1, 0.92, [0.11, 0.1, 0.51, 0.5]); // IoU ≈ 0.95 with a
        let c = det(1, 0.93, [0.6, 0.6, 0.9, 0.9]); // clear of both
        let out = filter_detections(&[a.clone(), b, c.clone()]);
        assert_eq!(out, vec![a, c]);
    }

    #[test]
    fn rule2_ignores_same_class_overlap() {
        let a = det(2, 0.95, [0.1, 0.1, 0.5, 0.5]);
        let b = det(2, 0.91, [0.11, 0.1, 0.51, 0.5]);
        let out = filter_detections(&[a, b]);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn rule2_tie_keeps_earlier_element() {
        let a = det(0, 0.92, [0.1, 0.1, 0.5, 0.5]);
        let b = det(1, 0.92, [0.1, 0.1, 0.5, 0.5]);
        let out = filter_detections(&[a.clone(), b]);
        assert_eq!(out, vec![a]);
    }

    #[test]
    fn rule3_keeps_top_two_classes() {
        let ds = vec![
            det(0, 0.99, [0.0, 0.0, 0.1, 0.1]),
            det(1, 0.95, [0.2, 0.2, 0.3, 0.3]),
            det(2, 0.93, [0.4, 0.4, 0.5, 0.5]),
            det(0, 0.91, [0.6, 0.6, 0.7, 0.7]),
        ];
        let out = filter_detections(&ds);
        let classes: Vec<usize> = out.iter().map(|d| d.class_id).collect();
        assert_eq!(classes, vec![0, 1, 0]);
    }

    #[test]
    fn random_lists_match_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for case in 0..50 {
            let n = rng.gen_range(0..14);
            let ds: Vec<Detection> = (0..n)
                .map(|_| {
                    let x0 = rng.gen_range(0.0..0.8);
                    let y0 = rng.gen_range(0.0..0.8);
                    // Narrow size range makes IoU > 0.7 reachable often.
                    let w = rng.gen_range(0.1..0.3);
                    let h = rng.gen_range(0.1..0.3);
                    det(
                        rng.gen_range(0..4),
                        // Cluster near the thresholds to exercise edges.
                        rng.gen_range(0.85..0.99),
                        [x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0)],
                    )
                })
                .collect();
            let got = filter_detections(&ds);
            let want = oracle_filter(&ds);
            assert_eq!(got, want, "case {case} diverged on {ds:?}");
        }
    }

    #[test]
    fn synthetic_detections_filter_to_exactly_the_tags() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let a = rng.gen_range(0..6);
            let mut b = rng.gen_range(0..5);
            if b >= a {
                b += 1;
            }
            for tags in [vec![a], vec![a, b]] {
                let ds = synth_detections(&tags, 6, &mut rng);
                let kept = filter_detections(&ds);
                let mut classes: Vec<usize> = kept.iter().map(|d| d.class_id).collect();
                classes.sort_unstable();
                classes.dedup();
                let mut want = tags.clone();
                want.sort_unstable();
                assert_eq!(classes, want, "tags {tags:?} detections {ds:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn filtering_is_idempotent_and_caps_classes(
            raw in proptest::collection::vec(
                (0usize..5, 0.0f64..1.0, 0.0f64..0.7, 0.0f64..0.7, 0.05f64..0.3, 0.05f64..0.3, 0usize..10),
                0..16,
            )
        ) {
            let ds: Vec<Detection> = raw
                .into_iter()
                .map(|(c, conf, x0, y0, w, h, fr)| Detection {
                    class_id: c,
                    confidence: conf,
                    bbox: [x0, y0, x0 + w, y0 + h],
                    frame_index: fr,
                })
                .collect();
            let once = filter_detections(&ds);
            let twice = filter_detections(&once);
            prop_assert_eq!(&once, &twice);
            let mut classes: Vec<usize> = once.iter().map(|d| d.class_id).collect();
            classes.sort_unstable();
            classes.dedup();
            prop_assert!(classes.len() <= 2);
        }
    }
}
