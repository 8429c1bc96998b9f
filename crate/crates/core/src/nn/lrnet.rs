use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::PadMode;
use crate::real::Real;

use super::{AtrousResidualBlock, AttentionOrder, Conv2d, GatedFusion, Init};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrNetConfig {
    pub num_groups: usize,
    pub blocks_per_group: usize,
    pub channels: usize,
    pub shuffle_factor: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub attention_order: AttentionOrder,
}

impl Default for LrNetConfig {
    fn default() -> Self {
        Self {
            num_groups: 3,
            blocks_per_group: 4,
            channels: 48,
            shuffle_factor: 2,
            in_channels: 3,
            out_channels: 3,
            attention_order: AttentionOrder::ChannelFirst,
        }
    }
}

impl LrNetConfig {
    /// Desk-scale variant: one group of two blocks, 16 channels.
    pub fn tiny() -> Self {
        Self {
            num_groups: 1,
            blocks_per_group: 2,
            channels: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_groups == 0 || self.blocks_per_group == 0 {
            return fail("LRNet needs at least one group with one block".into());
        }
        if self.channels == 0 || !self.channels.is_multiple_of(8) {
            return fail(format!("channels must be a positive multiple of 8, got {}", self.channels));
        }
        if self.shuffle_factor == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return fail("shuffle factor and channel counts must be >= 1".into());
        }
        Ok(())
    }
}

/// Low-resolution restoration network.
///
/// pixel-unshuffle → 3×3 stem → groups of atrous residual blocks → gated
/// fusion of the stem output and every group output → 3×3 head →
/// pixel-shuffle. Output has the input's shape.
#[derive(Clone, Debug)]
pub struct LrNet {
    pub config: LrNetConfig,
    pub stem: Conv2d,
    pub groups: Vec<Vec<AtrousResidualBlock>>,
    pub fusion: GatedFusion,
    pub head: Conv2d,
}

impl LrNet {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, config: &LrNetConfig) -> Result<Self> {
        config.validate()?;
        let s2 = config.shuffle_factor * config.shuffle_factor;
        let c = config.channels;
        let mut s = init.scope(name);
        let stem = Conv2d::new(&mut s, "stem", config.in_channels * s2, c, 3, PadMode::Replicate)?;
        let mut groups = Vec::with_capacity(config.num_groups);
        for k in 1..=config.num_groups {
            let mut gs = s.scope(&format!("group{k}"));
            let blocks = (0..config.blocks_per_group)
                .map(|b| AtrousResidualBlock::new(&mut gs, &format!("block{b}"), c, k, config.attention_order))
                .collect::<Result<Vec<_>>>()?;
            groups.push(blocks);
        }
        let fusion = GatedFusion::new(&mut s, "gate", c, config.num_groups + 1)?;
        let head = Conv2d::new(&mut s, "head", c, config.out_channels * s2, 3, PadMode::Replicate)?;
        Ok(Self {
            config: config.clone(),
            stem,
            groups,
            fusion,
            head,
        })
    }

    /// Stem output followed by the output of every group: `F^0 … F^k`.
    pub fn features<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Vec<Var>> {
        let down = g.pixel_unshuffle(x, self.config.shuffle_factor)?;
        let mut h = self.stem.forward(g, down)?;
        let mut taps = vec![h];
        for group in &self.groups {
            for block in group {
                h = block.forward(g, h)?;
            }
            taps.push(h);
        }
        Ok(taps)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let taps = self.features(g, x)?;
        let fused = self.fusion.forward(g, &taps)?;
        let out = self.head.forward(g, fused)?;
        g.pixel_shuffle(out, self.config.shuffle_factor)
    }
}
