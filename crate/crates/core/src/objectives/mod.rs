//! Target assignment and the weighted three-term detection loss.

mod assign;
mod losses;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::boxes::BBox;
use crate::error::{Error, Result};
use crate::model::LevelVars;

pub use assign::{
    assign_targets, centerness_target, level_ranges, ImageTargets, LevelGeometry, SizeRange,
};
pub use losses::{centerness_bce, focal_loss, giou_loss};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub lambda_cent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cls: 1.0,
            lambda_reg: 2.0,
            lambda_cent: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// Interior boundaries of the per-level size ranges, in input pixels.
    pub range_bounds: Vec<f64>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            weights: LossWeights::default(),
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            range_bounds: vec![64.0, 128.0],
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        if [w.lambda_cls, w.lambda_reg, w.lambda_cent]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Config(format!(
                "loss weights must be >= 0, got {w:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || !(self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focal alpha {} / gamma {} out of range",
                self.focal_alpha, self.focal_gamma
            )));
        }
        Ok(())
    }

    pub fn ranges(&self, levels: usize) -> Result<Vec<SizeRange>> {
        level_ranges(&self.range_bounds, levels)
    }
}

/// Loss components of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub focal: f64,
    pub giou: f64,
    pub centerness_bce: f64,
    pub total: f64,
    pub n_pos: usize,
}

impl LossBreakdown {
    pub fn new(focal: f64, giou: f64, centerness_bce: f64, n_pos: usize, w: &LossWeights) -> Self {
        LossBreakdown {
            focal,
            giou,
            centerness_bce,
            total: w.lambda_cls * focal + w.lambda_reg * giou + w.lambda_cent * centerness_bce,
            n_pos,
        }
    }
}

/// Weighted sum of the three component losses on one tape.
pub fn total_loss<'t>(
    focal: Var<'t>,
    giou: Var<'t>,
    bce: Var<'t>,
    w: &LossWeights,
) -> Result<Var<'t>> {
    focal
        .scale(w.lambda_cls)?
        .add(giou.scale(w.lambda_reg)?)?
        .add(bce.scale(w.lambda_cent)?)
}

/// Level geometries implied by the head outputs.
pub fn geometry_of(levels: &[LevelVars<'_>]) -> Vec<LevelGeometry> {
    levels
        .iter()
        .map(|lv| {
            let s = lv.cls_logits.shape();
            LevelGeometry {
                stride: lv.stride,
                height: s[2],
                width: s[3],
            }
        })
        .collect()
}

/// Assigns targets for every image of a batch.
pub fn batch_targets(
    boxes: &[Vec<BBox>],
    geometry: &[LevelGeometry],
    cfg: &ObjectiveConfig,
) -> Result<Vec<ImageTargets>> {
    let ranges = cfg.ranges(geometry.len())?;
    boxes
        .iter()
        .map(|b| assign_targets(b, geometry, &ranges))
        .collect()
}

/// Computes the detection loss for a batch of head outputs.
pub fn detection_loss<'t>(
    levels: &[LevelVars<'t>],
    targets: &[ImageTargets],
    cfg: &ObjectiveConfig,
) -> Result<(Var<'t>, LossBreakdown)> {
    let n = levels
        .first()
        .ok_or_else(|| Error::InvalidInput("no pyramid levels".into()))?
        .cls_logits
        .shape()[0];
    if targets.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} target sets for batch of {n}",
            targets.len()
        )));
    }
    let mut cls = Vec::new();
    let mut ctr = Vec::new();
    let mut dist = Vec::new();
    for lv in levels {
        let s = lv.cls_logits.shape();
        let hw = s[2] * s[3];
        cls.push(lv.cls_logits.reshape([n, hw])?);
        ctr.push(lv.centerness_logits.reshape([n, hw])?);
        dist.push(
            lv.distances()?
                .permute(&[0, 2, 3, 1])?
                .reshape([n, hw, 4])?,
        );
    }
    let cls = Var::concat(&cls, 1)?;
    let ctr = Var::concat(&ctr, 1)?;
    let dist = Var::concat(&dist, 1)?;
    let per_image = cls.shape()[1];

    let mut labels = Vec::with_capacity(n * per_image);
    let mut reg = Vec::new();
    let mut cent = Vec::new();
    for (img, t) in targets.iter().enumerate() {
        if t.len() != per_image {
            return Err(Error::InvalidInput(format!(
                "targets cover {} locations, outputs {per_image}",
                t.len()
            )));
        }
        for i in 0..per_image {
            let pos = t.is_positive(i);
            labels.push(pos);
            if pos {
                let flat = img * per_image + i;
                reg.push((flat, t.ltrb[i]));
                cent.push((flat, t.centerness[i]));
            }
        }
    }
    let n_pos = reg.len();
    let focal = focal_loss(
        cls,
        &labels,
        cfg.focal_alpha,
        cfg.focal_gamma,
        n_pos.max(1) as f64,
    )?;
    let giou = giou_loss(dist, &reg)?;
    let bce = centerness_bce(ctr, &cent)?;
    let total = total_loss(focal, giou, bce, &cfg.weights)?;
    let value = |v: Var<'_>| v.value().data()[0];
    let mut breakdown =
        LossBreakdown::new(value(focal), value(giou), value(bce), n_pos, &cfg.weights);
    breakdown.total = value(total);
    Ok((total, breakdown))
}
