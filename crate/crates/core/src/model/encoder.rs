use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::ops::Conv2dOptions;

use super::config::ModelConfig;
use super::layers::{BasicBlock, Builder, Conv, ConvBn, Ctx};

/// Residual encoder producing C2..C5 (strides 4, 8, 16, 32).
#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    stem: ConvBn,
    stages: Vec<Vec<BasicBlock>>,
}

impl Encoder {
    pub fn build<R: Rng>(b: &mut Builder<'_, R>, cfg: &ModelConfig) -> Self {
        let stem = b.conv_bn(
            "encoder.stem",
            3,
            cfg.base_width,
            7,
            Conv2dOptions::new(2, 3, 1),
        );
        let mut cin = cfg.base_width;
        let stages = (0..4)
            .map(|k| {
                let cout = cfg.stage_channels(k);
                (0..cfg.stage_depths[k])
                    .map(|j| {
                        let stride = if k > 0 && j == 0 { 2 } else { 1 };
                        let block = BasicBlock::build(
                            b,
                            &format!("encoder.c{}.{j}", k + 2),
                            cin,
                            cout,
                            stride,
                        );
                        cin = cout;
                        block
                    })
                    .collect()
            })
            .collect();
        Encoder { stem, stages }
    }

    /// Returns `[C2, C3, C4, C5]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, images: Var<'t>) -> Result<Vec<Var<'t>>> {
        let mut x = self
            .stem
            .forward(ctx, images)?
            .relu()?
            .max_pool2d(3, 2, 1)?;
        let mut maps = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in stage {
                x = block.forward(ctx, x)?;
            }
            maps.push(x);
        }
        Ok(maps)
    }
}

/// Atrous spatial pyramid pooling applied to C5.
#[derive(Clone, Debug)]
pub(crate) struct Aspp {
    point: ConvBn,
    atrous: Vec<ConvBn>,
    image: Conv,
    project: ConvBn,
}

/// Individual ASPP branch outputs, kept for inspection.
pub(crate) struct AsppBranches<'t> {
    pub point: Var<'t>,
    pub atrous: Vec<Var<'t>>,
    pub image: Var<'t>,
}

impl Aspp {
    pub fn build<R: Rng>(b: &mut Builder<'_, R>, cfg: &ModelConfig) -> Self {
        let cin = cfg.stage_channels(3);
        let width = cfg.fpn_channels;
        let point = b.conv_bn("aspp.point", cin, width, 1, Conv2dOptions::default());
        let atrous = cfg
            .aspp_rates
            .iter()
            .map(|&r| {
                b.conv_bn(
                    &format!("aspp.rate{r}"),
                    cin,
                    width,
                    3,
                    Conv2dOptions::new(1, r, r),
                )
            })
            .collect();
        // A 1×1 pooled map has zero batch variance per sample, so the image
        // branch uses a biased conv instead of batch norm.
        let image = b.conv("aspp.image", cin, width, 1, Conv2dOptions::default(), true);
        let project = b.conv_bn("aspp.project", 5 * width, cin, 1, Conv2dOptions::default());
        Aspp {
            point,
            atrous,
            image,
            project,
        }
    }

    pub fn branches<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<AsppBranches<'t>> {
        let s = x.shape();
        let point = self.point.forward(ctx, x)?.relu()?;
        let atrous = self
            .atrous
            .iter()
            .map(|a| a.forward(ctx, x)?.relu())
            .collect::<Result<_>>()?;
        let image = self
            .image
            .forward(ctx, x.global_avg_pool()?)?
            .relu()?
            .nearest_upsample(s[2], s[3])?;
        Ok(AsppBranches {
            point,
            atrous,
            image,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let br = self.branches(ctx, x)?;
        let mut all = vec![br.point];
        all.extend(br.atrous);
        all.push(br.image);
        self.project.forward(ctx, Var::concat(&all, 1)?)?.relu()
    }
}

/// Checks the input contract: `N × 3 × H × W` with H, W divisible by the
/// coarsest stride.
pub(crate) fn check_input(shape: &[usize], cfg: &ModelConfig) -> Result<()> {
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::shape(
            "encoder",
            format!("expected N×3×H×W, got {shape:?}"),
        ));
    }
    let s = cfg.max_stride();
    if shape[2] == 0 || shape[3] == 0 || shape[2] % s != 0 || shape[3] % s != 0 {
        return Err(Error::Config(format!(
            "input {}×{} not divisible by stride {s}",
            shape[2], shape[3]
        )));
    }
    Ok(())
}
