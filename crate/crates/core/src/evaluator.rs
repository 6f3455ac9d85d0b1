//! Precision/recall at IoU 0.50 and 101-point interpolated AP over
//! IoU 0.50:0.05:0.95.

use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::postprocess::{rank, Detection};

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Per-detection matching outcome for one image at one IoU threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Scores in matching order (descending).
    pub scores: Vec<f64>,
    pub is_tp: Vec<bool>,
    pub matched_gt: Vec<Option<usize>>,
    pub n_gt: usize,
}

/// Greedy matching: each detection, in the given order, takes the unmatched
/// ground-truth box with highest IoU ≥ `iou_threshold` (lowest index on ties).
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut used = vec![false; gts.len()];
    let mut out = MatchResult {
        scores: Vec::with_capacity(dets.len()),
        is_tp: Vec::with_capacity(dets.len()),
        matched_gt: Vec::with_capacity(dets.len()),
        n_gt: gts.len(),
    };
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let iou = d.bbox.iou(gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
        }
        out.scores.push(d.score);
        out.is_tp.push(best.is_some());
        out.matched_gt.push(best.map(|(g, _)| g));
    }
    out
}

/// `(precision, recall)` over detections scoring at least `cutoff`.
///
/// Precision is 1 when nothing is detected; recall is 1 when there is no
/// ground truth.
pub fn precision_recall(matches: &[MatchResult], cutoff: f64) -> (f64, f64) {
    let (mut tp, mut fp, mut n_gt) = (0usize, 0usize, 0usize);
    for m in matches {
        n_gt += m.n_gt;
        for (&s, &t) in m.scores.iter().zip(&m.is_tp) {
            if s >= cutoff {
                if t {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    let p = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if n_gt == 0 {
        1.0
    } else {
        tp as f64 / n_gt as f64
    };
    (p, r)
}

/// 101-point interpolated AP from TP flags sorted by descending score.
/// `None` when `n_gt == 0`.
pub fn average_precision(flags: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        tp += usize::from(f);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // Precision envelope: max precision at any later (higher-recall) point.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    let mut j = 0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        while j < recall.len() && recall[j] < r {
            j += 1;
        }
        if j < recall.len() {
            total += precision[j];
        }
    }
    Some(total / 101.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// At IoU 0.50 and the score cutoff.
    pub precision: f64,
    pub recall: f64,
    pub score_cutoff: f64,
    /// AP at each of the ten IoU thresholds (0 when undefined).
    pub ap_per_iou: Vec<f64>,
    pub map50: f64,
    pub map5095: f64,
    pub n_images: usize,
    pub n_gt: usize,
    pub n_detections: usize,
    /// Thresholds whose AP was undefined (no ground truth).
    pub undefined_ap: usize,
}

/// Evaluates per-image detections against per-image ground truth.
///
/// Detections are ranked within each image by score (ties: `x_min`, then
/// `y_min`); AP pools all images, ordering by score with ties resolved by
/// image index and then the per-image rank.
pub fn evaluate(dets: &[Vec<Detection>], gts: &[Vec<BBox>], score_cutoff: f64) -> EvalReport {
    assert_eq!(
        dets.len(),
        gts.len(),
        "detections and ground truth cover different images"
    );
    let sorted: Vec<Vec<Detection>> = dets
        .iter()
        .map(|d| {
            let mut d = d.clone();
            d.sort_by(rank);
            d
        })
        .collect();
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let mut ap_per_iou = Vec::with_capacity(10);
    let mut undefined_ap = 0;
    let mut pr = (1.0, 1.0);
    for (ti, thr) in iou_thresholds().into_iter().enumerate() {
        let matches: Vec<MatchResult> = sorted
            .iter()
            .zip(gts)
            .map(|(d, g)| match_detections(d, g, thr))
            .collect();
        if ti == 0 {
            pr = precision_recall(&matches, score_cutoff);
        }
        let mut pooled: Vec<(f64, bool)> = matches
            .iter()
            .flat_map(|m| m.scores.iter().copied().zip(m.is_tp.iter().copied()))
            .collect();
        // Stable: equal scores keep image/rank order.
        pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
        let flags: Vec<bool> = pooled.into_iter().map(|(_, t)| t).collect();
        match average_precision(&flags, n_gt) {
            Some(ap) => ap_per_iou.push(ap),
            None => {
                undefined_ap += 1;
                ap_per_iou.push(0.0);
            }
        }
    }
    let map50 = ap_per_iou[0];
    let map5095 = ap_per_iou.iter().sum::<f64>() / ap_per_iou.len() as f64;
    EvalReport {
        precision: pr.0,
        recall: pr.1,
        score_cutoff,
        ap_per_iou,
        map50,
        map5095,
        n_images: dets.len(),
        n_gt,
        n_detections: dets.iter().map(Vec::len).sum(),
        undefined_ap,
    }
}
