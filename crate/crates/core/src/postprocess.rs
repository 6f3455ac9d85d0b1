//! Decoding head outputs into scored boxes, NMS, and tile merging.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::model::{cell_center, LevelOutputs};
use crate::ops::sigmoid_scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Pixel,
    Geo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: Frame,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub cls_score: f64,
    pub centerness: f64,
    /// `cls_score × centerness`.
    pub score: f64,
    /// Stride of the producing pyramid level; not serialized.
    #[serde(skip)]
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_id: Option<String>,
}

impl Detection {
    pub fn pixel(bbox: BBox, cls_score: f64, centerness: f64, level: usize) -> Self {
        Detection {
            frame: Frame::Pixel,
            bbox,
            cls_score,
            centerness,
            score: cls_score * centerness,
            level,
            tree_id: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub pre_nms_top_k: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            score_threshold: 0.01,
            iou_threshold: 0.5,
            pre_nms_top_k: 1000,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!(
                "score threshold {} not in [0, 1]",
                self.score_threshold
            )));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Config(format!(
                "IoU threshold {} not in (0, 1)",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// Ranking order: score descending, then `x_min`, then `y_min` ascending.
pub fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// Decodes image `n` of the head outputs into pixel-frame detections.
///
/// Keeps locations with `score >= threshold`, at most `top_k` per level
/// (highest scores first), and clips boxes to the `tile_w × tile_h` tile.
/// Cells centered outside that tile (zero padding) are skipped.
pub fn decode(
    outputs: &[LevelOutputs],
    n: usize,
    threshold: f64,
    top_k: usize,
    tile_w: f64,
    tile_h: f64,
) -> Vec<Detection> {
    let mut all = Vec::new();
    for level in outputs {
        let (h, w) = (level.height(), level.width());
        let mut dets = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let (px, py) = cell_center(level.stride, x, y);
                if px >= tile_w || py >= tile_h {
                    continue;
                }
                let cls = sigmoid_scalar(level.cls_logits.at(&[n, 0, y, x]));
                let ctr = sigmoid_scalar(level.centerness_logits.at(&[n, 0, y, x]));
                if cls * ctr < threshold {
                    continue;
                }
                let [x0, y0, x1, y1] = level.decode(n, x, y);
                let bbox = BBox {
                    x_min: x0,
                    y_min: y0,
                    x_max: x1,
                    y_max: y1,
                }
                .clamp_to(tile_w, tile_h);
                dets.push(Detection::pixel(bbox, cls, ctr, level.stride));
            }
        }
        dets.sort_by(rank);
        dets.truncate(top_k);
        all.extend(dets);
    }
    all
}

/// Greedy non-maximum suppression: boxes with IoU above `iou_threshold`
/// against an already kept box are dropped.
pub fn nms(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(rank);
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Translates each tile's detections by its top-left offset, then runs one
/// global NMS.
pub fn merge_tiles(
    per_tile: Vec<((f64, f64), Vec<Detection>)>,
    iou_threshold: f64,
) -> Vec<Detection> {
    let all = per_tile
        .into_iter()
        .flat_map(|((dx, dy), dets)| {
            dets.into_iter().map(move |mut d| {
                d.bbox = d.bbox.translate(dx, dy);
                d
            })
        })
        .collect();
    nms(all, iou_threshold)
}
