use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::Result;
use crate::ops::Conv2dOptions;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::layers::{Builder, Conv, Ctx};

/// Prior probability of foreground used to initialize the class bias.
const PRIOR: f64 = 0.01;

#[derive(Clone, Debug)]
pub(crate) struct Head {
    cls_tower: Vec<Conv>,
    reg_tower: Vec<Conv>,
    cls: Conv,
    centerness: Conv,
    ltrb: Conv,
    scales: Vec<usize>,
    strides: Vec<usize>,
}

/// Differentiable head outputs for one pyramid level.
#[derive(Clone, Copy)]
pub struct LevelVars<'t> {
    pub stride: usize,
    /// `N × 1 × H × W`
    pub cls_logits: Var<'t>,
    /// `N × 4 × H × W`
    pub ltrb_raw: Var<'t>,
    /// `N × 1 × H × W`
    pub centerness_logits: Var<'t>,
    /// Learnable level scale, shape `[1]`.
    pub scale: Var<'t>,
}

impl<'t> LevelVars<'t> {
    /// Decoded distances `scale · exp(ltrb_raw)`.
    pub fn distances(&self) -> Result<Var<'t>> {
        self.ltrb_raw.exp()?.mul_scalar(self.scale)
    }

    pub fn snapshot(&self) -> LevelOutputs {
        LevelOutputs {
            stride: self.stride,
            cls_logits: (*self.cls_logits.value()).clone(),
            ltrb_raw: (*self.ltrb_raw.value()).clone(),
            centerness_logits: (*self.centerness_logits.value()).clone(),
            scale: self.scale.value().data()[0],
        }
    }
}

/// Head outputs detached from any tape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelOutputs {
    pub stride: usize,
    pub cls_logits: Tensor,
    pub ltrb_raw: Tensor,
    pub centerness_logits: Tensor,
    pub scale: f64,
}

pub type HeadOutputs = Vec<LevelOutputs>;

impl LevelOutputs {
    pub fn height(&self) -> usize {
        self.cls_logits.dim(2)
    }

    pub fn width(&self) -> usize {
        self.cls_logits.dim(3)
    }

    /// Box `(x_min, y_min, x_max, y_max)` predicted at cell `(x, y)` of image `n`.
    pub fn decode(&self, n: usize, x: usize, y: usize) -> [f64; 4] {
        let raw = std::array::from_fn(|c| self.ltrb_raw.at(&[n, c, y, x]));
        decode_box(self.stride, x, y, raw, self.scale)
    }
}

/// Center of cell `(x, y)` on a level of the given stride.
pub fn cell_center(stride: usize, x: usize, y: usize) -> (f64, f64) {
    let s = stride as f64;
    (s * (x as f64 + 0.5), s * (y as f64 + 0.5))
}

/// `l,t,r,b = scale · exp(raw)` around the cell center.
pub fn decode_box(stride: usize, x: usize, y: usize, raw: [f64; 4], scale: f64) -> [f64; 4] {
    let (px, py) = cell_center(stride, x, y);
    let [l, t, r, b] = raw.map(|v| scale * v.exp());
    [px - l, py - t, px + r, py + b]
}

impl Head {
    pub fn build<R: Rng>(b: &mut Builder<'_, R>, cfg: &ModelConfig) -> Self {
        let c = cfg.fpn_channels;
        let same = Conv2dOptions::new(1, 1, 1);
        let tower = |b: &mut Builder<'_, R>, name: &str| {
            (0..2)
                .map(|i| b.conv(&format!("head.{name}_tower.{i}"), c, c, 3, same, true))
                .collect::<Vec<_>>()
        };
        let cls_tower = tower(b, "cls");
        let reg_tower = tower(b, "reg");
        let out = |b: &mut Builder<'_, R>, name: &str, cout: usize, bias: f64| {
            let w = Tensor::normal([cout, c, 3, 3], 0.01, b.rng);
            b.conv_with(name, w, Some(Tensor::full([cout], bias)), same)
        };
        let cls = out(b, "head.cls", 1, -((1.0 - PRIOR) / PRIOR).ln());
        let centerness = out(b, "head.centerness", 1, 0.0);
        let ltrb = out(b, "head.ltrb", 4, 0.0);
        let scales = cfg
            .pyramid_strides
            .iter()
            .map(|&s| {
                b.params
                    .insert(format!("head.scale{s}"), Tensor::full([1], s as f64))
            })
            .collect();
        Head {
            cls_tower,
            reg_tower,
            cls,
            centerness,
            ltrb,
            scales,
            strides: cfg.pyramid_strides.clone(),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, levels: &[Var<'t>]) -> Result<Vec<LevelVars<'t>>> {
        levels
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let mut c = x;
                for conv in &self.cls_tower {
                    c = conv.forward(ctx, c)?.relu()?;
                }
                let mut r = x;
                for conv in &self.reg_tower {
                    r = conv.forward(ctx, r)?.relu()?;
                }
                Ok(LevelVars {
                    stride: self.strides[i],
                    cls_logits: self.cls.forward(ctx, c)?,
                    ltrb_raw: self.ltrb.forward(ctx, r)?,
                    centerness_logits: self.centerness.forward(ctx, c)?,
                    scale: ctx.params[self.scales[i]],
                })
            })
            .collect()
    }
}
