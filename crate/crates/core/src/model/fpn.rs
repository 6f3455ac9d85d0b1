use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ops::Conv2dOptions;

use super::config::{ModelConfig, STAGE_STRIDES};
use super::layers::{Builder, Conv, Ctx};

/// Top-down pyramid: lateral 1×1 plus upsampled deeper map, then 3×3 smoothing.
#[derive(Clone, Debug)]
pub(crate) struct Fpn {
    strides: Vec<usize>,
    lateral: Vec<Conv>,
    smooth: Vec<Conv>,
}

impl Fpn {
    pub fn build<R: Rng>(b: &mut Builder<'_, R>, cfg: &ModelConfig) -> Self {
        let mut lateral = Vec::new();
        let mut smooth = Vec::new();
        for &s in &cfg.pyramid_strides {
            let k = stage_index(s).expect("validated stride");
            let c = cfg.fpn_channels;
            lateral.push(b.conv(
                &format!("fpn.lateral{s}"),
                cfg.stage_channels(k),
                c,
                1,
                Conv2dOptions::default(),
                true,
            ));
            smooth.push(b.conv(
                &format!("fpn.smooth{s}"),
                c,
                c,
                3,
                Conv2dOptions::new(1, 1, 1),
                true,
            ));
        }
        Fpn {
            strides: cfg.pyramid_strides.clone(),
            lateral,
            smooth,
        }
    }

    /// `stages` holds C2..C5 (C5 already replaced by the ASPP output).
    /// Returns one map per configured stride, finest first.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, stages: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let mut out = vec![None; self.strides.len()];
        let mut deeper: Option<(Var<'t>, usize)> = None;
        for (i, &s) in self.strides.iter().enumerate().rev() {
            let c = stage_index(s)
                .and_then(|k| stages.get(k))
                .ok_or_else(|| Error::InvalidInput(format!("missing stage for stride {s}")))?;
            let mut merged = self.lateral[i].forward(ctx, *c)?;
            if let Some((d, ds)) = deeper {
                let f = ds / s;
                merged = merged.add(d.nearest_upsample(f, f)?)?;
            }
            out[i] = Some(self.smooth[i].forward(ctx, merged)?);
            deeper = Some((merged, s));
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every level filled"))
            .collect())
    }
}

fn stage_index(stride: usize) -> Option<usize> {
    STAGE_STRIDES.iter().position(|&s| s == stride)
}
