//! Detection/ground-truth matching with polygon IoU, precision-recall
//! curves, per-class average precision and mAP.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dota_io::{AnnotationRecord, Category};
use crate::geometry::iou_fast;
use crate::postprocess::{rank_order, Detection};

pub const DEFAULT_EVAL_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no AP reported for configured class {0}")]
    MissingClass(String),
    #[error("unknown AP method {0:?}")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// Area under the monotone precision envelope.
    #[default]
    Continuous,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.0.
    ElevenPoint,
}

impl FromStr for ApMethod {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" => Ok(Self::Continuous),
            "eleven_point" | "11point" | "eleven-point" => Ok(Self::ElevenPoint),
            _ => Err(EvalError::UnknownMethod(s.to_string())),
        }
    }
}

impl fmt::Display for ApMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Continuous => "continuous",
            Self::ElevenPoint => "eleven_point",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    Tp,
    Fp,
    /// Best overlap is a difficult ground truth; excluded from scoring.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One flag per input detection, in input order.
    pub flags: Vec<MatchFlag>,
    /// For each ground truth, the index of the detection it was matched to.
    pub gt_matched: Vec<Option<usize>>,
}

/// Greedy matching in score order (ties: `source_index`).
///
/// For each detection the overall best-IoU ground truth is found first; if
/// it is difficult and overlaps at `iou_thr` or more, the detection is
/// ignored. Otherwise the detection is a true positive when its best-IoU
/// unmatched non-difficult ground truth reaches `iou_thr`, and a false
/// positive if not.
pub fn match_detections(dets: &[Detection], gts: &[AnnotationRecord], iou_thr: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| rank_order(&dets[a], &dets[b]));

    let mut flags = vec![MatchFlag::Fp; dets.len()];
    let mut gt_matched: Vec<Option<usize>> = vec![None; gts.len()];

    for di in order {
        let ious: Vec<f64> = gts
            .iter()
            .map(|g| iou_fast(&dets[di].quad, &g.quad))
            .collect();
        let best_any = argmax(ious.iter().copied().enumerate());
        if let Some((g, v)) = best_any {
            if gts[g].difficult && v >= iou_thr {
                flags[di] = MatchFlag::Ignored;
                continue;
            }
        }
        let best_open = argmax(
            ious.iter()
                .copied()
                .enumerate()
                .filter(|&(g, _)| !gts[g].difficult && gt_matched[g].is_none()),
        );
        if let Some((g, v)) = best_open {
            if v >= iou_thr {
                flags[di] = MatchFlag::Tp;
                gt_matched[g] = Some(di);
            }
        }
    }
    MatchResult { flags, gt_matched }
}

/// First index with the maximum value.
fn argmax(it: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    it.fold(None, |best, (i, v)| match best {
        Some((_, bv)) if v <= bv => best,
        _ => Some((i, v)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score: f64,
}

/// Precision/recall after each scored detection, in the given order.
/// `matches` holds `(score, is_tp)` already sorted by score.
pub fn pr_curve(matches: &[(f64, bool)], n_gt: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    let mut out = Vec::with_capacity(matches.len());
    for (i, &(score, is_tp)) in matches.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        let recall = if n_gt == 0 {
            0.0
        } else {
            tp as f64 / n_gt as f64
        };
        out.push(PrPoint {
            recall,
            precision: tp as f64 / (i + 1) as f64,
            score,
        });
    }
    out
}

/// AP from TP/FP flags ordered by descending score. Returns 0 when
/// `n_gt == 0`.
pub fn average_precision(tp_flags: &[bool], n_gt: usize, method: ApMethod) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let n = n_gt as f64;
    let mut tp = 0usize;
    // (recall, precision) at each detection
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(tp_flags.len());
    for (i, &f) in tp_flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        curve.push((tp as f64 / n, tp as f64 / (i + 1) as f64));
    }
    // envelope[i] = max precision at any point from i onward
    let mut envelope: Vec<f64> = curve.iter().map(|&(_, p)| p).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }

    let ap = match method {
        ApMethod::Continuous => {
            // Sum recall increments over runs of constant envelope height.
            let mut area = 0.0;
            let mut run_start = 0.0;
            let mut run_end = 0.0;
            let mut run_height = f64::NAN;
            for (i, &(r, _)) in curve.iter().enumerate() {
                if r <= run_end {
                    continue;
                }
                if envelope[i] != run_height {
                    if run_height.is_finite() {
                        area += (run_end - run_start) * run_height;
                    }
                    run_start = run_end;
                    run_height = envelope[i];
                }
                run_end = r;
            }
            if run_height.is_finite() {
                area += (run_end - run_start) * run_height;
            }
            area
        }
        ApMethod::ElevenPoint => {
            let mut total = 0.0;
            for t in 0..=10 {
                let thr = t as f64 / 10.0;
                let p = curve
                    .iter()
                    .zip(&envelope)
                    .find(|((r, _), _)| *r >= thr - 1e-12)
                    .map_or(0.0, |(_, &e)| e);
                total += p;
            }
            total / 11.0
        }
    };
    ap.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub category: Category,
    pub ap: f64,
    /// Non-difficult ground truths.
    pub n_gt: usize,
    /// Detections counted (TP + FP; ignored ones excluded).
    pub n_det: usize,
}

/// Unweighted mean of the APs of `classes`. Every configured class must
/// have an entry in `per_class`.
pub fn mean_ap(per_class: &[ClassAp], classes: &[Category]) -> Result<f64, EvalError> {
    if classes.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for c in classes {
        let entry = per_class
            .iter()
            .find(|e| e.category == *c)
            .ok_or_else(|| EvalError::MissingClass(c.name().to_string()))?;
        sum += entry.ap;
    }
    Ok(sum / classes.len() as f64)
}

/// Detections and ground truth for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub image_id: String,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_thr: f64,
    pub method: ApMethod,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thr: DEFAULT_EVAL_IOU,
            method: ApMethod::Continuous,
        }
    }
}

/// Corpus-level AP for each of `classes`. Per-image matches are pooled and
/// ordered by score, then image id, then `source_index`.
pub fn evaluate(images: &[ImageEval], classes: &[Category], cfg: &EvalConfig) -> Vec<ClassAp> {
    classes
        .par_iter()
        .map(|&cat| evaluate_class(images, cat, cfg))
        .collect()
}

fn evaluate_class(images: &[ImageEval], cat: Category, cfg: &EvalConfig) -> ClassAp {
    let cls = cat.index();
    let mut pooled: Vec<(f64, &str, u64, bool)> = Vec::new();
    let mut n_gt = 0;
    for img in images {
        let dets: Vec<Detection> = img
            .detections
            .iter()
            .filter(|d| d.class_id == cls)
            .copied()
            .collect();
        let gts: Vec<AnnotationRecord> = img
            .ground_truth
            .iter()
            .filter(|g| g.category == cat)
            .copied()
            .collect();
        n_gt += gts.iter().filter(|g| !g.difficult).count();
        let m = match_detections(&dets, &gts, cfg.iou_thr);
        debug_assert!(single_assignment(&m));
        for (d, f) in dets.iter().zip(&m.flags) {
            if *f != MatchFlag::Ignored {
                pooled.push((
                    d.score,
                    img.image_id.as_str(),
                    d.source_index,
                    *f == MatchFlag::Tp,
                ));
            }
        }
    }
    pooled.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(b.1))
            .then(a.2.cmp(&b.2))
    });
    let flags: Vec<bool> = pooled.iter().map(|p| p.3).collect();
    ClassAp {
        category: cat,
        ap: average_precision(&flags, n_gt, cfg.method),
        n_gt,
        n_det: flags.len(),
    }
}

/// True when no ground truth is matched to more than one detection and every
/// matched detection is flagged TP.
pub fn single_assignment(m: &MatchResult) -> bool {
    let mut seen = vec![false; m.flags.len()];
    for d in m.gt_matched.iter().flatten() {
        if seen[*d] || m.flags[*d] != MatchFlag::Tp {
            return false;
        }
        seen[*d] = true;
    }
    seen.iter().filter(|s| **s).count() == m.flags.iter().filter(|f| **f == MatchFlag::Tp).count()
}

/// Categories with at least one non-difficult ground truth in `images`.
pub fn present_classes(images: &[ImageEval]) -> Vec<Category> {
    let mut present: Vec<Category> = images
        .iter()
        .flat_map(|i| i.ground_truth.iter())
        .filter(|g| !g.difficult)
        .map(|g| g.category)
        .collect();
    present.sort();
    present.dedup();
    present
}
