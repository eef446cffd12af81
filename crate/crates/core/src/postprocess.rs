//! Quadrilateral non-maximum suppression and score filtering.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, Quad};

pub const DEFAULT_NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub quad: Quad,
    pub score: f64,
    pub class_id: usize,
    pub source_index: u64,
}

impl Detection {
    pub fn new(quad: Quad, score: f64, class_id: usize, source_index: u64) -> Self {
        debug_assert!((0.0..=1.0).contains(&score), "score {score} outside [0, 1]");
        Self {
            quad,
            score,
            class_id,
            source_index,
        }
    }
}

/// Score descending, then `source_index` ascending.
pub fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.source_index.cmp(&b.source_index))
}

/// Greedy NMS with an axis-aligned early exit. Suppresses a detection
/// when its IoU with an already-kept one is strictly above `iou_threshold`.
pub fn quad_nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    quad_nms_with(dets, iou_threshold, true)
}

/// [`quad_nms`] with the axis-aligned early exit switchable.
pub fn quad_nms_with(dets: &[Detection], iou_threshold: f64, fast_reject: bool) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));
    let boxes: Vec<_> = order.iter().map(|d| d.quad.aabb()).collect();

    let mut suppressed = vec![false; order.len()];
    let mut kept = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        kept.push(*order[i]);
        for j in (i + 1)..order.len() {
            if suppressed[j] {
                continue;
            }
            if fast_reject && boxes[i].is_disjoint(&boxes[j]) {
                continue;
            }
            if iou(&order[i].quad, &order[j].quad) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Drops detections scoring below `score_threshold` and keeps at most
/// `top_k` of the rest (highest scores, earlier input first on ties).
/// Survivors stay in input order.
pub fn filter_detections(dets: &[Detection], score_threshold: f64, top_k: usize) -> Vec<Detection> {
    let mut idx: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= score_threshold)
        .collect();
    if idx.len() > top_k {
        idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
        idx.truncate(top_k);
        idx.sort_unstable();
    }
    idx.into_iter().map(|i| dets[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::rng::{seeded, uniform};
    use proptest::prelude::*;

    fn det(x: f64, y: f64, s: f64, score: f64, id: u64) -> Detection {
        Detection::new(Quad::axis_aligned(x, y, x + s, y + s), score, 0, id)
    }

    #[test]
    fn empty_and_single() {
        assert!(quad_nms(&[], 0.5).is_empty());
        let d = det(0.0, 0.0, 1.0, 0.3, 0);
        assert_eq!(quad_nms(&[d], 0.5), vec![d]);
    }

    #[test]
    fn duplicate_suppressed() {
        let a = det(0.0, 0.0, 4.0, 0.8, 0);
        let b = det(0.0, 0.0, 4.0, 0.9, 1);
        assert_eq!(quad_nms(&[a, b], 0.5), vec![b]);
    }

    #[test]
    fn threshold_one_only_removes_exact_duplicates() {
        let a = det(0.0, 0.0, 4.0, 0.9, 0);
        let b = det(0.0, 0.0, 4.0, 0.8, 1);
        let c = det(0.1, 0.0, 4.0, 0.7, 2);
        // IoU of identical quads is exactly 1, which is not > 1
        assert_eq!(quad_nms(&[a, b, c], 1.0).len(), 3);
        assert_eq!(quad_nms(&[a, b, c], 0.9).len(), 1);
    }

    #[test]
    fn ties_broken_by_source_index() {
        let a = det(0.0, 0.0, 4.0, 0.5, 7);
        let b = det(0.0, 0.0, 4.0, 0.5, 3);
        assert_eq!(quad_nms(&[a, b], 0.5)[0].source_index, 3);
    }

    #[test]
    fn filtering() {
        let ds = [
            det(0., 0., 1., 0.2, 0),
            det(0., 0., 1., 0.9, 1),
            det(0., 0., 1., 0.5, 2),
        ];
        assert_eq!(filter_detections(&ds, 0.0, 10), ds.to_vec());
        assert!(filter_detections(&ds, 0.95, 10).is_empty());
        assert_eq!(filter_detections(&ds, 0.0, 1), vec![ds[1]]);
        assert_eq!(filter_detections(&ds, 0.3, 10), vec![ds[1], ds[2]]);
        assert_eq!(filter_detections(&ds, 0.0, 2), vec![ds[1], ds[2]]);
    }

    #[test]
    fn kept_count_not_monotone_in_threshold() {
        let q = Quad::axis_aligned;
        let a = Detection::new(q(0.0, 0.0, 10.0, 10.0), 0.9, 0, 0);
        let b = Detection::new(q(6.0, 0.0, 26.0, 10.0), 0.8, 0, 1);
        let c = Detection::new(q(6.0, 0.0, 26.0, 5.0), 0.7, 0, 2);
        let d = Detection::new(q(6.0, 5.0, 26.0, 10.0), 0.6, 0, 3);
        let all = [a, b, c, d];
        // at 0.12, a removes b and c, d survive; at 0.45, b survives and removes c, d
        assert_eq!(quad_nms(&all, 0.12), vec![a, c, d]);
        assert_eq!(quad_nms(&all, 0.45), vec![a, b]);
    }

    fn random_dets(seed: u64, n: usize) -> Vec<Detection> {
        let mut rng = seeded(seed, 5);
        (0..n)
            .map(|i| {
                let cx = uniform(&mut rng, 0.0, 60.0);
                let cy = uniform(&mut rng, 0.0, 60.0);
                let r = uniform(&mut rng, 3.0, 15.0);
                let t = uniform(&mut rng, 0.0, 3.2);
                let pts = std::array::from_fn(|k| {
                    let a = t + k as f64 * std::f64::consts::FRAC_PI_2;
                    Point::new(cx + r * a.cos(), cy + 0.6 * r * a.sin())
                });
                let score = (uniform(&mut rng, 0.0, 10.0).floor()) / 10.0;
                Detection::new(Quad::canonicalize(pts).unwrap(), score, 0, i as u64)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn nms_invariants(seed in 0u64..10_000, n in 0usize..40, thr in 0.0..1.0f64) {
            let ds = random_dets(seed, n);
            let kept = quad_nms(&ds, thr);
            prop_assert_eq!(&kept, &quad_nms_with(&ds, thr, false));
            for i in 0..kept.len() {
                for j in (i + 1)..kept.len() {
                    prop_assert!(iou(&kept[i].quad, &kept[j].quad) <= thr);
                    prop_assert_ne!(rank_order(&kept[i], &kept[j]), Ordering::Greater);
                }
            }
        }
    }
}
