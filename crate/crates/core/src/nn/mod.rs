//! Network layers: the low-resolution restoration network and its blocks.

mod blocks;
mod lrnet;

pub use blocks::{
    AdaptiveNorm, AtrousResidualBlock, AttentionOrder, ChannelAttention, GatedFusion, PixelAttention,
    SmoothedAtrousConv,
};
pub use lrnet::{LrNet, LrNetConfig};

use rand::RngCore;

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::kernels::{Conv2dSpec, PadMode};
use crate::real::Real;
use crate::tensor::Tensor;

/// Negative slope of every leaky ReLU in the network.
pub const LRELU_SLOPE: f64 = 0.2;

/// Parameter factory that prefixes names with a dotted scope path.
pub struct Init<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut dyn RngCore,
    prefix: String,
}

impl<'a, T: Real> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut dyn RngCore) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Init<'_, T> {
        let prefix = self.path(name);
        Init {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn param(&mut self, name: &str, value: Tensor<T>, decay: bool) -> Result<ParamId> {
        let path = self.path(name);
        self.store.add(path, value, decay)
    }

    /// Uniform fan-in scaled kernel, gain matched to the leaky ReLU slope.
    pub fn kaiming(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let fan_in: usize = shape[1..].iter().product();
        let gain = (2.0 / (1.0 + LRELU_SLOPE * LRELU_SLOPE)).sqrt();
        let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
        let value = Tensor::uniform(shape, -bound, bound, &mut *self.rng);
        self.param(name, value, true)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize], decay: bool) -> Result<ParamId> {
        self.param(name, Tensor::zeros(shape), decay)
    }

    pub fn full(&mut self, name: &str, shape: &[usize], value: f64, decay: bool) -> Result<ParamId> {
        self.param(name, Tensor::full(shape, crate::real::lit(value)), decay)
    }
}

/// Convolution layer with square odd kernel, stride 1 and size-preserving padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        pad_mode: PadMode,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        let weight = s.kaiming("weight", &[c_out, c_in, kernel, kernel])?;
        let bias = Some(s.zeros("bias", &[c_out], false)?);
        Ok(Self {
            weight,
            bias,
            spec: Conv2dSpec::same(kernel, 1).with_pad_mode(pad_mode),
        })
    }

    /// Same layer with all weights and the bias initialised to zero.
    pub fn zeroed<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        pad_mode: PadMode,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        let weight = s.zeros("weight", &[c_out, c_in, kernel, kernel], true)?;
        let bias = Some(s.zeros("bias", &[c_out], false)?);
        Ok(Self {
            weight,
            bias,
            spec: Conv2dSpec::same(kernel, 1).with_pad_mode(pad_mode),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.spec)
    }
}
