use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::model::cell_center;

/// Spatial size of one pyramid level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelGeometry {
    pub stride: usize,
    pub height: usize,
    pub width: usize,
}

impl LevelGeometry {
    pub fn locations(&self) -> usize {
        self.height * self.width
    }
}

/// Half-open size range `(lo, hi]` on `max(l, t, r, b)` for one level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeRange {
    pub lo: f64,
    pub hi: f64,
}

impl SizeRange {
    pub fn contains(&self, v: f64) -> bool {
        v > self.lo && v <= self.hi
    }
}

/// Builds level ranges from the interior boundaries, e.g. `[64, 128]` gives
/// `(0, 64], (64, 128], (128, ∞)`.
pub fn level_ranges(bounds: &[f64], levels: usize) -> Result<Vec<SizeRange>> {
    if bounds.len() + 1 != levels {
        return Err(Error::Config(format!(
            "{levels} levels need {} range boundaries, got {}",
            levels.saturating_sub(1),
            bounds.len()
        )));
    }
    if bounds.iter().any(|b| !(b.is_finite() && *b > 0.0))
        || bounds.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(Error::Config(format!(
            "range boundaries must increase: {bounds:?}"
        )));
    }
    let mut edges = vec![0.0];
    edges.extend_from_slice(bounds);
    edges.push(f64::INFINITY);
    Ok(edges
        .windows(2)
        .map(|w| SizeRange { lo: w[0], hi: w[1] })
        .collect())
}

/// Per-location targets for one image, levels concatenated finest first with
/// row-major locations inside each level.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTargets {
    /// Index of the assigned ground-truth box, if positive.
    pub assigned: Vec<Option<usize>>,
    /// `(l, t, r, b)`; meaningful only on positives.
    pub ltrb: Vec<[f64; 4]>,
    /// Centerness target; 0 on negatives.
    pub centerness: Vec<f64>,
    /// Boxes skipped for having zero area.
    pub rejected: usize,
}

impl ImageTargets {
    pub fn len(&self) -> usize {
        self.assigned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assigned.is_empty()
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.assigned[i].is_some()
    }

    pub fn n_pos(&self) -> usize {
        self.assigned.iter().filter(|a| a.is_some()).count()
    }
}

/// `sqrt(min(l,r)/max(l,r) · min(t,b)/max(t,b))`.
pub fn centerness_target(l: f64, t: f64, r: f64, b: f64) -> Result<f64> {
    if !(l > 0.0 && t > 0.0 && r > 0.0 && b > 0.0) {
        return Err(Error::InvalidInput(format!(
            "centerness needs positive distances, got ({l}, {t}, {r}, {b})"
        )));
    }
    Ok((l.min(r) / l.max(r) * (t.min(b) / t.max(b))).sqrt())
}

/// Assigns every location to at most one ground-truth box.
///
/// A location is a candidate for a box when its cell center lies strictly
/// inside the box and the largest of its four side distances falls within the
/// level's size range; among candidates the smallest-area box wins, earlier
/// boxes winning exact ties.
pub fn assign_targets(
    boxes: &[BBox],
    levels: &[LevelGeometry],
    ranges: &[SizeRange],
) -> Result<ImageTargets> {
    if levels.len() != ranges.len() {
        return Err(Error::Config(format!(
            "{} levels but {} size ranges",
            levels.len(),
            ranges.len()
        )));
    }
    let total: usize = levels.iter().map(LevelGeometry::locations).sum();
    let mut out = ImageTargets {
        assigned: vec![None; total],
        ltrb: vec![[0.0; 4]; total],
        centerness: vec![0.0; total],
        rejected: boxes.iter().filter(|b| b.is_degenerate()).count(),
    };
    let mut offset = 0;
    for (geom, range) in levels.iter().zip(ranges) {
        for (bi, bx) in boxes.iter().enumerate() {
            if bx.is_degenerate() {
                continue;
            }
            // Only cells whose centers can fall inside the box are visited.
            let s = geom.stride as f64;
            let x0 = ((bx.x_min / s - 0.5).floor().max(0.0)) as usize;
            let y0 = ((bx.y_min / s - 0.5).floor().max(0.0)) as usize;
            let x1 = ((bx.x_max / s - 0.5).ceil().max(0.0) as usize).min(geom.width);
            let y1 = ((bx.y_max / s - 0.5).ceil().max(0.0) as usize).min(geom.height);
            for y in y0..y1 {
                for x in x0..x1 {
                    let (px, py) = cell_center(geom.stride, x, y);
                    if !bx.contains_strict(px, py) {
                        continue;
                    }
                    let d = [px - bx.x_min, py - bx.y_min, bx.x_max - px, bx.y_max - py];
                    if !range.contains(d.iter().copied().fold(0.0, f64::max)) {
                        continue;
                    }
                    let i = offset + y * geom.width + x;
                    let better = match out.assigned[i] {
                        None => true,
                        Some(prev) => bx.area() < boxes[prev].area(),
                    };
                    if better {
                        out.assigned[i] = Some(bi);
                        out.ltrb[i] = d;
                        out.centerness[i] = centerness_target(d[0], d[1], d[2], d[3])?;
                    }
                }
            }
        }
        offset += geom.locations();
    }
    Ok(out)
}
