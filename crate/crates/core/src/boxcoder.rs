//! Four-point regression coding between rectangular anchors and quads,
//! and anchor/ground-truth target assignment.

use std::ops::{Index, IndexMut};

use rand::seq::index::sample;

use crate::anchors::Anchor;
use crate::geometry::{iou_fast, GeometryError, Point, Quad};
use crate::rng::seeded;

pub const DEFAULT_POS_IOU: f64 = 0.7;
pub const DEFAULT_NEG_IOU: f64 = 0.3;
pub const DEFAULT_BATCH_SIZE: usize = 256;
pub const DEFAULT_POS_FRACTION: f64 = 0.5;

/// Normalized corner offsets `(dx1, dy1, ..., dx4, dy4)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Delta8(pub [f64; 8]);

impl Delta8 {
    pub const ZERO: Delta8 = Delta8([0.0; 8]);

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for Delta8 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Delta8 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Offsets of each canonical `gt` vertex from the matching anchor corner,
/// divided by the anchor width (x) or height (y).
pub fn encode(anchor: &Anchor, gt: &Quad) -> Delta8 {
    let corners = anchor.corners();
    let mut d = [0.0; 8];
    for (k, (g, c)) in gt.vertices().iter().zip(corners.iter()).enumerate() {
        d[2 * k] = (g.x - c.x) / anchor.width;
        d[2 * k + 1] = (g.y - c.y) / anchor.height;
    }
    Delta8(d)
}

/// Inverse of [`encode`], followed by canonicalization.
pub fn decode(anchor: &Anchor, d: &Delta8) -> Result<Quad, GeometryError> {
    Quad::canonicalize(decode_points(anchor, d))
}

/// Decoded vertices before canonicalization.
pub fn decode_points(anchor: &Anchor, d: &Delta8) -> [Point; 4] {
    let corners = anchor.corners();
    std::array::from_fn(|k| {
        Point::new(
            corners[k].x + d[2 * k] * anchor.width,
            corners[k].y + d[2 * k + 1] * anchor.height,
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorLabel {
    Positive { gt: usize, target: Delta8 },
    Negative,
    Ignore,
}

impl AnchorLabel {
    pub fn is_positive(&self) -> bool {
        matches!(self, AnchorLabel::Positive { .. })
    }

    pub fn is_negative(&self) -> bool {
        matches!(self, AnchorLabel::Negative)
    }

    pub fn matched_gt(&self) -> Option<usize> {
        match self {
            AnchorLabel::Positive { gt, .. } => Some(*gt),
            _ => None,
        }
    }

    pub fn target(&self) -> Option<&Delta8> {
        match self {
            AnchorLabel::Positive { target, .. } => Some(target),
            _ => None,
        }
    }
}

/// Per-anchor best match against a set of ground-truth quads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestMatch {
    pub iou: f64,
    pub gt: Option<usize>,
}

/// For each anchor, its highest polygon IoU over `gts` (ties: lowest gt index).
pub fn best_matches(anchors: &[Anchor], gts: &[Quad]) -> (Vec<BestMatch>, Vec<Vec<f64>>) {
    let mut per_gt = vec![vec![0.0; anchors.len()]; gts.len()];
    let best = anchors
        .iter()
        .enumerate()
        .map(|(ai, a)| {
            let aq = a.to_quad();
            let mut best = BestMatch { iou: 0.0, gt: None };
            for (gi, g) in gts.iter().enumerate() {
                let v = iou_fast(&aq, g);
                per_gt[gi][ai] = v;
                if best.gt.is_none() || v > best.iou {
                    best = BestMatch {
                        iou: v,
                        gt: Some(gi),
                    };
                }
            }
            best
        })
        .collect();
    (best, per_gt)
}

/// Labels anchors positive (IoU >= `pos_iou`, or best anchor for some gt),
/// negative (IoU < `neg_iou`), or ignored.
///
/// An anchor promoted only because it is the best anchor for a gt is matched
/// to that gt; if it is the best anchor for several gts, the one it overlaps
/// most wins (ties: lowest gt index).
pub fn assign_targets(
    anchors: &[Anchor],
    gts: &[Quad],
    pos_iou: f64,
    neg_iou: f64,
) -> Vec<AnchorLabel> {
    assert!(
        (0.0..=1.0).contains(&neg_iou) && neg_iou <= pos_iou && pos_iou <= 1.0,
        "thresholds must satisfy 0 <= neg_iou <= pos_iou <= 1"
    );
    if gts.is_empty() {
        return vec![AnchorLabel::Negative; anchors.len()];
    }
    let (best, per_gt) = best_matches(anchors, gts);

    // forced[a] = gt that promotes anchor a, with its IoU
    let mut forced: Vec<Option<(usize, f64)>> = vec![None; anchors.len()];
    for (gi, row) in per_gt.iter().enumerate() {
        let Some((ai, &v)) =
            row.iter()
                .enumerate()
                .fold(None, |acc: Option<(usize, &f64)>, (i, v)| match acc {
                    Some((_, bv)) if *v <= *bv => acc,
                    _ => Some((i, v)),
                })
        else {
            continue;
        };
        match forced[ai] {
            Some((_, fv)) if fv >= v => {}
            _ => forced[ai] = Some((gi, v)),
        }
    }

    anchors
        .iter()
        .enumerate()
        .map(|(ai, anchor)| {
            let m = best[ai];
            let gt = if m.iou >= pos_iou {
                m.gt
            } else {
                forced[ai].map(|(g, _)| g)
            };
            match gt {
                Some(g) => AnchorLabel::Positive {
                    gt: g,
                    target: encode(anchor, &gts[g]),
                },
                None if m.iou < neg_iou => AnchorLabel::Negative,
                None => AnchorLabel::Ignore,
            }
        })
        .collect()
}

/// Seeded minibatch: up to `floor(size * pos_fraction)` positives, filled
/// with negatives. Returned indices are sorted ascending.
pub fn sample_minibatch(
    labels: &[AnchorLabel],
    size: usize,
    pos_fraction: f64,
    seed: u64,
) -> Vec<usize> {
    assert!(
        pos_fraction > 0.0 && pos_fraction < 1.0,
        "pos_fraction must lie in (0, 1)"
    );
    let pos: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i].is_positive())
        .collect();
    let neg: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i].is_negative())
        .collect();

    let n_pos = pos.len().min((size as f64 * pos_fraction).floor() as usize);
    let n_neg = neg.len().min(size - n_pos);

    let mut rng = seeded(seed, 0);
    let mut out: Vec<usize> = sample(&mut rng, pos.len(), n_pos)
        .into_iter()
        .map(|i| pos[i])
        .chain(
            sample(&mut rng, neg.len(), n_neg)
                .into_iter()
                .map(|i| neg[i]),
        )
        .collect();
    out.sort_unstable();
    out
}
