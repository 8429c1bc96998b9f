use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, Var};
use crate::error::{Error, Result};
use crate::kernels::{Conv2dSpec, PadMode};
use crate::real::Real;

use super::{Conv2d, Init, LRELU_SLOPE};

/// Dilated 3×3 convolution preceded by a shared separable smoothing filter.
///
/// Every input channel is filtered by the same `(2r−1)×(2r−1)` kernel, stored
/// as a vertical and a horizontal 1-D factor. The per-output-channel bias
/// `b_i` is added to the smoothed input before the dilation-`r` convolution,
/// so output channel `i` computes `Σ_j (F_j ∗ K_sep + b_i) ∗_r K_ij`.
#[derive(Clone, Debug)]
pub struct SmoothedAtrousConv {
    pub sep_v: ParamId,
    pub sep_h: ParamId,
    pub pre_bias: ParamId,
    pub kernel: ParamId,
    pub dilation: usize,
}

impl SmoothedAtrousConv {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, c_in: usize, c_out: usize, dilation: usize) -> Result<Self> {
        if dilation == 0 {
            return Err(Error::Config("dilation must be >= 1".into()));
        }
        let extent = Self::separable_extent(dilation);
        let box_tap = 1.0 / extent as f64;
        let mut s = init.scope(name);
        Ok(Self {
            sep_v: s.full("sep_v", &[1, 1, extent, 1], box_tap, true)?,
            sep_h: s.full("sep_h", &[1, 1, 1, extent], box_tap, true)?,
            pre_bias: s.zeros("pre_bias", &[c_out], false)?,
            kernel: s.kaiming("kernel", &[c_out, c_in, 3, 3])?,
            dilation,
        })
    }

    /// Side length of the shared smoothing kernel for dilation `r`: `2r − 1`.
    pub fn separable_extent(dilation: usize) -> usize {
        2 * dilation - 1
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let r = self.dilation;
        let (sv, sh) = (g.param(self.sep_v), g.param(self.sep_h));
        let smoothed = g.depthwise_conv2d(x, sv, (r - 1, 0), PadMode::Replicate)?;
        let smoothed = g.depthwise_conv2d(smoothed, sh, (0, r - 1), PadMode::Replicate)?;
        let (k, pb) = (g.param(self.kernel), g.param(self.pre_bias));
        let spec = Conv2dSpec::new(1, r, r).with_pad_mode(PadMode::Replicate);
        g.conv2d_prebias(smoothed, k, None, Some(pb), spec)
    }
}

/// `λ·x + μ·InstanceNorm(x)` with learnt scalars λ and μ.
#[derive(Clone, Debug)]
pub struct AdaptiveNorm {
    pub lambda: ParamId,
    pub mu: ParamId,
    pub eps: f64,
}

impl AdaptiveNorm {
    pub const EPS: f64 = 1e-5;

    /// Starts as the identity: λ = 1, μ = 0.
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Self {
            lambda: s.full("lambda", &[1], 1.0, false)?,
            mu: s.full("mu", &[1], 0.0, false)?,
            eps: Self::EPS,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let normed = g.instance_norm(x, self.eps)?;
        let (lambda, mu) = (g.param(self.lambda), g.param(self.mu));
        let a = g.scale_by(x, lambda)?;
        let b = g.scale_by(normed, mu)?;
        g.add(a, b)
    }
}

fn check_attention_width(channels: usize) -> Result<()> {
    if channels == 0 || !channels.is_multiple_of(8) {
        return Err(Error::Config(format!(
            "attention needs a channel count divisible by 8, got {channels}"
        )));
    }
    Ok(())
}

/// Per-channel gate: GAP → 1×1 (C→C/8) → LReLU → 1×1 (C/8→C) → sigmoid.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl ChannelAttention {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        check_attention_width(channels)?;
        let mut s = init.scope(name);
        Ok(Self {
            reduce: Conv2d::new(&mut s, "reduce", channels, channels / 8, 1, PadMode::Zeros)?,
            expand: Conv2d::new(&mut s, "expand", channels / 8, channels, 1, PadMode::Zeros)?,
        })
    }

    /// Gate values, shape `[N, C, 1, 1]`.
    pub fn weights<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let pooled = g.global_avg_pool(x)?;
        let h = self.reduce.forward(g, pooled)?;
        let h = g.leaky_relu(h, LRELU_SLOPE);
        let h = self.expand.forward(g, h)?;
        Ok(g.sigmoid(h))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = self.weights(g, x)?;
        g.channel_mul(x, w)
    }
}

/// Per-pixel gate shared across channels: 1×1 (C→C/8) → LReLU → 1×1 (C/8→1) → sigmoid.
#[derive(Clone, Debug)]
pub struct PixelAttention {
    pub reduce: Conv2d,
    pub collapse: Conv2d,
}

impl PixelAttention {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        check_attention_width(channels)?;
        let mut s = init.scope(name);
        Ok(Self {
            reduce: Conv2d::new(&mut s, "reduce", channels, channels / 8, 1, PadMode::Zeros)?,
            collapse: Conv2d::new(&mut s, "collapse", channels / 8, 1, 1, PadMode::Zeros)?,
        })
    }

    /// Gate map, shape `[N, 1, H, W]`.
    pub fn map<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.reduce.forward(g, x)?;
        let h = g.leaky_relu(h, LRELU_SLOPE);
        let h = self.collapse.forward(g, h)?;
        Ok(g.sigmoid(h))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let m = self.map(g, x)?;
        g.spatial_mul(x, m)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionOrder {
    #[default]
    ChannelFirst,
    PixelFirst,
}

/// Residual block of group `k`: four parallel smoothed atrous convolutions
/// with dilations `2^(k−1) … 2^(k+2)`, each producing `C/2` channels, fused
/// back to `C` channels, gated by channel and pixel attention and added to
/// the block input.
#[derive(Clone, Debug)]
pub struct AtrousResidualBlock {
    pub branches: Vec<(SmoothedAtrousConv, AdaptiveNorm)>,
    pub fuse: Conv2d,
    pub channel_attention: ChannelAttention,
    pub pixel_attention: PixelAttention,
    pub order: AttentionOrder,
}

impl AtrousResidualBlock {
    pub fn dilations(group: usize) -> [usize; 4] {
        let base = 1usize << (group - 1);
        [base, base * 2, base * 4, base * 8]
    }

    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        channels: usize,
        group: usize,
        order: AttentionOrder,
    ) -> Result<Self> {
        if group == 0 {
            return Err(Error::Config("atrous group index starts at 1".into()));
        }
        if !channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "atrous residual block needs an even channel count, got {channels}"
            )));
        }
        check_attention_width(channels)?;
        let mut s = init.scope(name);
        let branches = Self::dilations(group)
            .into_iter()
            .map(|d| {
                let conv = SmoothedAtrousConv::new(&mut s, &format!("atrous_d{d}"), channels, channels / 2, d)?;
                let norm = AdaptiveNorm::new(&mut s, &format!("norm_d{d}"))?;
                Ok((conv, norm))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            branches,
            fuse: Conv2d::new(&mut s, "fuse", 2 * channels, channels, 1, PadMode::Zeros)?,
            channel_attention: ChannelAttention::new(&mut s, "channel_attention", channels)?,
            pixel_attention: PixelAttention::new(&mut s, "pixel_attention", channels)?,
            order,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for (conv, norm) in &self.branches {
            let h = conv.forward(g, x)?;
            let h = norm.forward(g, h)?;
            outs.push(g.leaky_relu(h, LRELU_SLOPE));
        }
        let cat = g.concat(&outs)?;
        let mut h = self.fuse.forward(g, cat)?;
        match self.order {
            AttentionOrder::ChannelFirst => {
                h = self.channel_attention.forward(g, h)?;
                h = self.pixel_attention.forward(g, h)?;
            }
            AttentionOrder::PixelFirst => {
                h = self.pixel_attention.forward(g, h)?;
                h = self.channel_attention.forward(g, h)?;
            }
        }
        g.add(h, x)
    }
}

/// Fuses multi-depth features with learnt single-channel masks:
/// `Σ_l M_l ⊙ F_l`, the masks produced by one 3×3 convolution over the
/// concatenated features.
#[derive(Clone, Debug)]
pub struct GatedFusion {
    pub gate: Conv2d,
    pub levels: usize,
}

impl GatedFusion {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, channels: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("gated fusion needs at least one level".into()));
        }
        Ok(Self {
            gate: Conv2d::new(init, name, levels * channels, levels, 3, PadMode::Replicate)?,
            levels,
        })
    }

    pub fn masks<T: Real>(&self, g: &mut Graph<'_, T>, features: &[Var]) -> Result<Var> {
        if features.len() != self.levels {
            return Err(Error::shape(
                "gated_fusion",
                format!("expected {} feature maps, got {}", self.levels, features.len()),
            ));
        }
        let first = g.shape(features[0]).to_vec();
        if let Some(&bad) = features.iter().find(|&&f| g.shape(f) != first.as_slice()) {
            return Err(Error::shape(
                "gated_fusion",
                format!("feature shapes differ: {:?} vs {:?}", first, g.shape(bad)),
            ));
        }
        let cat = g.concat(features)?;
        self.gate.forward(g, cat)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, features: &[Var]) -> Result<Var> {
        let masks = self.masks(g, features)?;
        let mut terms = Vec::with_capacity(features.len());
        for (l, &f) in features.iter().enumerate() {
            let m = g.narrow(masks, l, 1)?;
            terms.push(g.spatial_mul(f, m)?);
        }
        g.sum(&terms)
    }
}
