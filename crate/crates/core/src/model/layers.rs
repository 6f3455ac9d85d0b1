//! Layer descriptors. Each holds parameter indices into a [`ParamStore`];
//! forward passes resolve them against the variables bound on a tape.

use std::cell::RefCell;

use rand::Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::ops::{BatchNormOptions, Conv2dOptions, NormMode, RunningStats};
use crate::tensor::Tensor;

use super::params::{kaiming, ParamStore};

/// Per-forward context: bound parameters and batch-norm statistics.
pub(crate) struct Ctx<'a, 't> {
    pub params: &'a [Var<'t>],
    pub stats: RefCell<Vec<RunningStats>>,
    pub mode: NormMode,
}

impl<'t> Ctx<'_, 't> {
    fn p(&self, id: usize) -> Var<'t> {
        self.params[id]
    }
}

/// Registers parameters while the architecture is being laid out.
pub(crate) struct Builder<'r, R: Rng> {
    pub params: ParamStore,
    pub stats: Vec<(String, usize)>,
    pub rng: &'r mut R,
}

impl<'r, R: Rng> Builder<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Builder {
            params: ParamStore::new(),
            stats: Vec::new(),
            rng,
        }
    }

    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        opts: Conv2dOptions,
        bias: bool,
    ) -> Conv {
        let w = kaiming([cout, cin, k, k], self.rng);
        self.conv_with(name, w, bias.then(|| Tensor::zeros([cout])), opts)
    }

    pub fn conv_with(
        &mut self,
        name: &str,
        weight: Tensor,
        bias: Option<Tensor>,
        opts: Conv2dOptions,
    ) -> Conv {
        let weight = self.params.insert(format!("{name}.weight"), weight);
        let bias = bias.map(|b| self.params.insert(format!("{name}.bias"), b));
        Conv { weight, bias, opts }
    }

    pub fn bn(&mut self, name: &str, c: usize) -> BatchNorm {
        let gamma = self
            .params
            .insert(format!("{name}.gamma"), Tensor::ones([c]));
        let beta = self
            .params
            .insert(format!("{name}.beta"), Tensor::zeros([c]));
        self.stats.push((name.to_string(), c));
        BatchNorm {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        }
    }

    pub fn conv_bn(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        opts: Conv2dOptions,
    ) -> ConvBn {
        ConvBn {
            conv: self.conv(&format!("{name}.conv"), cin, cout, k, opts, false),
            bn: self.bn(&format!("{name}.bn"), cout),
        }
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        let w = Tensor::normal([din, dout], (1.0 / din as f64).sqrt(), self.rng);
        Linear {
            weight: self.params.insert(format!("{name}.weight"), w),
            bias: self
                .params
                .insert(format!("{name}.bias"), Tensor::zeros([dout])),
        }
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            gamma: self
                .params
                .insert(format!("{name}.gamma"), Tensor::ones([d])),
            beta: self
                .params
                .insert(format!("{name}.beta"), Tensor::zeros([d])),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub weight: usize,
    pub bias: Option<usize>,
    pub opts: Conv2dOptions,
}

impl Conv {
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        x.conv2d(ctx.p(self.weight), self.bias.map(|b| ctx.p(b)), self.opts)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

impl BatchNorm {
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let mut stats = ctx.stats.borrow_mut();
        let opts = BatchNormOptions {
            mode: ctx.mode,
            ..Default::default()
        };
        x.batch_norm2d(
            ctx.p(self.gamma),
            ctx.p(self.beta),
            &mut stats[self.stats],
            opts,
        )
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBn {
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        self.bn.forward(ctx, self.conv.forward(ctx, x)?)
    }
}

/// `x W + b` applied along the last axis.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let mut shape = x.shape();
        let din = shape.pop().unwrap_or(0);
        let rows = shape.iter().product();
        let w = ctx.p(self.weight);
        shape.push(w.shape()[1]);
        x.reshape([rows, din])?
            .matmul(w)?
            .bias_add(ctx.p(self.bias), 1)?
            .reshape(shape)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(ctx.p(self.gamma), ctx.p(self.beta), 1e-5)
    }
}

/// Two 3×3 conv-BN layers with an identity or projected shortcut.
#[derive(Clone, Debug)]
pub(crate) struct BasicBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub shortcut: Option<ConvBn>,
}

impl BasicBlock {
    pub fn build<R: Rng>(
        b: &mut Builder<'_, R>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        BasicBlock {
            conv1: b.conv_bn(
                &format!("{name}.conv1"),
                cin,
                cout,
                3,
                Conv2dOptions::new(stride, 1, 1),
            ),
            conv2: b.conv_bn(
                &format!("{name}.conv2"),
                cout,
                cout,
                3,
                Conv2dOptions::new(1, 1, 1),
            ),
            shortcut: (stride != 1 || cin != cout).then(|| {
                b.conv_bn(
                    &format!("{name}.shortcut"),
                    cin,
                    cout,
                    1,
                    Conv2dOptions::new(stride, 0, 1),
                )
            }),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.conv1.forward(ctx, x)?.relu()?;
        let y = self.conv2.forward(ctx, y)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(ctx, x)?,
            None => x,
        };
        y.add(skip)?.relu()
    }
}
