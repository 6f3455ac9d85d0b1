use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::layers::{Builder, Ctx, LayerNorm, Linear};

/// Learnable row/column tables; `P[:, i, j] = Row[i] + Col[j]`.
#[derive(Clone, Debug)]
pub(crate) struct Positional {
    row: usize,
    col: usize,
    max: usize,
}

impl Positional {
    pub fn build<R: Rng>(b: &mut Builder<'_, R>, cfg: &ModelConfig) -> Self {
        let shape = [cfg.max_pos_hw, cfg.fpn_channels];
        let row = Tensor::normal(shape, 0.02, b.rng);
        let col = Tensor::normal(shape, 0.02, b.rng);
        Positional {
            row: b.params.insert("pos.row", row),
            col: b.params.insert("pos.col", col),
            max: cfg.max_pos_hw,
        }
    }

    /// Encoding for an `h × w` level laid out as tokens `[h·w, C]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, h: usize, w: usize) -> Result<Var<'t>> {
        if h > self.max || w > self.max {
            return Err(Error::Config(format!(
                "level {h}×{w} exceeds positional table size {}",
                self.max
            )));
        }
        let row = ctx.params[self.row];
        let c = row.shape()[1];
        let rows = row.narrow(0, 0, h)?.reshape([h, 1, c])?.expand(1, w)?;
        let cols = ctx.params[self.col]
            .narrow(0, 0, w)?
            .reshape([1, w, c])?
            .expand(0, h)?;
        rows.add(cols)?.reshape([h * w, c])
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm2: LayerNorm,
    ffn1: Linear,
    ffn2: Linear,
}

/// Pre-norm transformer blocks shared by every pyramid level.
#[derive(Clone, Debug)]
pub(crate) struct Refiner {
    pub pos: Positional,
    blocks: Vec<Block>,
    heads: usize,
}

impl Refiner {
    pub fn build<R: Rng>(b: &mut Builder<'_, R>, cfg: &ModelConfig) -> Self {
        let pos = Positional::build(b, cfg);
        let c = cfg.fpn_channels;
        let hidden = c * cfg.ffn_multiplier;
        let blocks = (0..cfg.attention_blocks)
            .map(|i| {
                let n = format!("attn.{i}");
                Block {
                    norm1: b.layer_norm(&format!("{n}.norm1"), c),
                    q: b.linear(&format!("{n}.q"), c, c),
                    k: b.linear(&format!("{n}.k"), c, c),
                    v: b.linear(&format!("{n}.v"), c, c),
                    out: b.linear(&format!("{n}.out"), c, c),
                    norm2: b.layer_norm(&format!("{n}.norm2"), c),
                    ffn1: b.linear(&format!("{n}.ffn1"), c, hidden),
                    ffn2: b.linear(&format!("{n}.ffn2"), hidden, c),
                }
            })
            .collect();
        Refiner {
            pos,
            blocks,
            heads: cfg.attention_heads,
        }
    }

    /// Refines a level map `[N, C, H, W]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let tokens = self.tokens(ctx, x)?;
        self.blocks_forward(ctx, tokens)?
            .reshape([n, h, w, c])?
            .permute(&[0, 3, 1, 2])
    }

    /// Flattened level plus positional encoding, `[N, H·W, C]`.
    pub fn tokens<'t>(&self, ctx: &Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h * w == 0 {
            return Err(Error::InvalidInput("attention over an empty level".into()));
        }
        let pos = self
            .pos
            .forward(ctx, h, w)?
            .reshape([1, h * w, c])?
            .expand(0, n)?;
        x.permute(&[0, 2, 3, 1])?.reshape([n, h * w, c])?.add(pos)
    }

    pub fn blocks_forward<'t>(&self, ctx: &Ctx<'_, 't>, mut x: Var<'t>) -> Result<Var<'t>> {
        for block in &self.blocks {
            let h = block.norm1.forward(ctx, x)?;
            let (q, k, v) = (
                self.split(block.q.forward(ctx, h)?)?,
                self.split(block.k.forward(ctx, h)?)?,
                self.split(block.v.forward(ctx, h)?)?,
            );
            let a = self.merge(q.attention(k, v)?)?;
            x = x.add(block.out.forward(ctx, a)?)?;
            let h = block.norm2.forward(ctx, x)?;
            let f = block
                .ffn2
                .forward(ctx, block.ffn1.forward(ctx, h)?.relu()?)?;
            x = x.add(f)?;
        }
        Ok(x)
    }

    /// Attention weights `[N, heads, L, L]` of the first block for `tokens`.
    #[cfg(test)]
    pub fn first_block_weights<'t>(&self, ctx: &Ctx<'_, 't>, tokens: Var<'t>) -> Result<Tensor> {
        let block = self
            .blocks
            .first()
            .ok_or_else(|| Error::Config("no attention blocks".into()))?;
        let h = block.norm1.forward(ctx, tokens)?;
        let q = self.split(block.q.forward(ctx, h)?)?;
        let k = self.split(block.k.forward(ctx, h)?)?;
        crate::ops::attention_weights(&q.value(), &k.value())
    }

    /// `[N, L, C]` → `[N, heads, L, C/heads]`.
    fn split<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        x.reshape([s[0], s[1], self.heads, s[2] / self.heads])?
            .permute(&[0, 2, 1, 3])
    }

    fn merge<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        x.permute(&[0, 2, 1, 3])?.reshape([s[0], s[2], s[1] * s[3]])
    }
}
