use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strides of the encoder stages C2..C5.
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Channels of C2; each deeper stage doubles.
    pub base_width: usize,
    /// Residual blocks per stage C2..C5.
    pub stage_depths: [usize; 4],
    pub fpn_channels: usize,
    pub aspp_rates: [usize; 3],
    pub attention_heads: usize,
    pub attention_blocks: usize,
    /// Hidden width of the attention feed-forward layer, as a multiple of
    /// `fpn_channels`.
    pub ffn_multiplier: usize,
    /// Pyramid levels, finest first; the coarsest must be 32 (C5 + ASPP).
    pub pyramid_strides: Vec<usize>,
    /// Rows/columns of the learnable positional tables.
    pub max_pos_hw: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_width: 16,
            stage_depths: [1, 1, 1, 1],
            fpn_channels: 64,
            aspp_rates: [2, 4, 6],
            attention_heads: 4,
            attention_blocks: 1,
            ffn_multiplier: 2,
            pyramid_strides: vec![8, 16, 32],
            max_pos_hw: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.base_width == 0 || self.fpn_channels == 0 || self.ffn_multiplier == 0 {
            return fail("widths must be positive".into());
        }
        if self.stage_depths.contains(&0) {
            return fail(format!(
                "every stage needs a block, got {:?}",
                self.stage_depths
            ));
        }
        if self.attention_heads == 0 || self.fpn_channels % self.attention_heads != 0 {
            return fail(format!(
                "fpn_channels {} not divisible by {} heads",
                self.fpn_channels, self.attention_heads
            ));
        }
        let r = self.aspp_rates;
        if r.iter().any(|&v| v < 2) || r[0] == r[1] || r[1] == r[2] || r[0] == r[2] {
            return fail(format!("ASPP rates must be distinct and >= 2, got {r:?}"));
        }
        let s = &self.pyramid_strides;
        if s.is_empty()
            || s.windows(2).any(|w| w[0] >= w[1])
            || s.iter().any(|v| !STAGE_STRIDES.contains(v))
            || s.last() != Some(&32)
        {
            return fail(format!(
                "pyramid strides must be increasing, drawn from {STAGE_STRIDES:?} and end at 32, got {s:?}"
            ));
        }
        if self.max_pos_hw == 0 {
            return fail("max_pos_hw must be positive".into());
        }
        Ok(())
    }

    pub fn max_stride(&self) -> usize {
        *self.pyramid_strides.last().unwrap_or(&32)
    }

    /// Channel count of stage `k` in 0..4 (C2..C5).
    pub fn stage_channels(&self, k: usize) -> usize {
        self.base_width << k
    }

    pub fn head_dim(&self) -> usize {
        self.fpn_channels / self.attention_heads
    }
}
