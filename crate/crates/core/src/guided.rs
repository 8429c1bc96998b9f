//! Trainable guided filter for joint upsampling, the full DAGF pipeline, and
//! geometric self-ensembling.
//!
//! Given a full-resolution input `X_h`, its downsampled copy `X_l` and the
//! restored low-resolution output `Y_l`, the filter fits a local affine model
//! `Ȳ_l = A_l ⊙ Ḡ_l + b_l` on guide features `G = F(X)`, upsamples the
//! coefficients and applies them to `G_h`:
//!
//! ```text
//! G_l = F(X_l), G_h = F(X_h)
//! Σ_GG = f_μ(G_l²) − f_μ(G_l)²          Σ_GY = f_μ(G_l Y_l) − f_μ(G_l) f_μ(Y_l)
//! A_l  = f_local([Σ_GG, Σ_GY])          b_l  = f_μ(Y_l) − A_l ⊙ f_μ(G_l)
//! Y_h  = up(A_l) ⊙ G_h + up(b_l)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::kernels::conv::depthwise_forward;
use crate::kernels::PadMode;
use crate::nn::{AdaptiveNorm, AtrousResidualBlock, AttentionOrder, Conv2d, Init, LrNet, LrNetConfig, LRELU_SLOPE};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// 1×1 conv → adaptive norm → LReLU → atrous residual block → 1×1 conv.
    AtrousBlock,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFilterKind {
    /// Depthwise 3×3 convolution, initialised to the normalized box.
    Learnt,
    /// Fixed box mean over the valid part of each window.
    Box,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Three 1×1 convolutions (6→32→32→3) with adaptive norm and ReLU between.
    Learnt,
    /// `A = Σ_GY / (Σ_GG + eps)`.
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidedFilterConfig {
    pub transform: TransformKind,
    /// Internal width of the guide transform.
    pub transform_width: usize,
    pub mean_filter: MeanFilterKind,
    /// One mean filter for guide and target statistics, or two.
    pub shared_mean_filter: bool,
    pub solver: SolverKind,
    pub local_hidden: usize,
    /// Regulariser of the closed-form solver.
    pub eps: f64,
    /// Box-average `A_l` and `b_l` before upsampling, as the classic filter does.
    pub smooth_coefficients: bool,
}

impl Default for GuidedFilterConfig {
    fn default() -> Self {
        Self {
            transform: TransformKind::AtrousBlock,
            transform_width: 16,
            mean_filter: MeanFilterKind::Learnt,
            shared_mean_filter: true,
            solver: SolverKind::Learnt,
            local_hidden: 32,
            eps: 1e-4,
            smooth_coefficients: false,
        }
    }
}

impl GuidedFilterConfig {
    /// He et al.'s filter expressed through the trainable pipeline: identity
    /// guide, box means, closed-form coefficients averaged before use.
    pub fn classic(eps: f64) -> Self {
        Self {
            transform: TransformKind::Identity,
            mean_filter: MeanFilterKind::Box,
            solver: SolverKind::ClosedForm,
            eps,
            smooth_coefficients: true,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DagfConfig {
    pub lrnet: LrNetConfig,
    /// `X_l` is `X_h` bilinearly resized by `1 / downsample_factor`.
    pub downsample_factor: usize,
    pub guided_filter: GuidedFilterConfig,
    /// Average over the eight dihedral transforms at inference.
    pub ensemble: bool,
}

impl Default for DagfConfig {
    fn default() -> Self {
        Self {
            lrnet: LrNetConfig::default(),
            downsample_factor: 4,
            guided_filter: GuidedFilterConfig::default(),
            ensemble: false,
        }
    }
}

impl DagfConfig {
    /// Desk-scale profile: LRNet with one group of two 16-channel blocks, factor 2.
    pub fn tiny() -> Self {
        Self {
            lrnet: LrNetConfig::tiny(),
            downsample_factor: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lrnet.validate()?;
        if self.downsample_factor == 0 {
            return Err(Error::Config("downsample_factor must be >= 1".into()));
        }
        let gf = &self.guided_filter;
        if gf.transform == TransformKind::AtrousBlock && (gf.transform_width == 0 || !gf.transform_width.is_multiple_of(8)) {
            return Err(Error::Config(format!(
                "guided_filter.transform_width must be a positive multiple of 8, got {}",
                gf.transform_width
            )));
        }
        if gf.solver == SolverKind::Learnt && gf.local_hidden == 0 {
            return Err(Error::Config("guided_filter.local_hidden must be >= 1".into()));
        }
        if gf.solver == SolverKind::ClosedForm && gf.eps <= 0.0 {
            return Err(Error::Config("guided_filter.eps must be > 0".into()));
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        self.downsample_factor * self.lrnet.shuffle_factor
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.size_multiple();
        for (axis, e) in [("H", h), ("W", w)] {
            if e == 0 || e % m != 0 {
                return Err(Error::dim("dagf", axis, e.next_multiple_of(m).max(m), e));
            }
        }
        Ok(())
    }
}

/// Box mean over `(2r+1)²` windows truncated to the image, per channel.
pub fn box_mean<T: Real>(x: &Tensor<T>, radius: usize) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4("box_mean")?;
    let k = 2 * radius + 1;
    let col = Tensor::<T>::ones(&[1, 1, k, 1]);
    let row = Tensor::<T>::ones(&[1, 1, 1, k]);
    let sums = depthwise_forward(x, &col, (radius, 0), PadMode::Zeros)?;
    let sums = depthwise_forward(&sums, &row, (0, radius), PadMode::Zeros)?;
    let counts = window_counts(h, w, radius);
    let plane = h * w;
    Ok(Tensor::from_fn(sums.shape(), |i| {
        lit(sums.data()[i].as_f64() / counts[i % plane])
    }))
}

fn window_counts(h: usize, w: usize, radius: usize) -> Vec<f64> {
    let span = |i: usize, n: usize| (i + radius).min(n - 1) + 1 - i.saturating_sub(radius);
    let mut counts = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            counts.push((span(y, h) * span(x, w)) as f64);
        }
    }
    counts
}

/// Graph version of [`box_mean`].
pub fn box_mean_var<T: Real>(g: &mut Graph<'_, T>, x: Var, radius: usize) -> Result<Var> {
    let (n, _, h, w) = g.value(x).dims4("box_mean")?;
    let k = 2 * radius + 1;
    let col = g.constant(Tensor::ones(&[1, 1, k, 1]));
    let row = g.constant(Tensor::ones(&[1, 1, 1, k]));
    let sums = g.depthwise_conv2d(x, col, (radius, 0), PadMode::Zeros)?;
    let sums = g.depthwise_conv2d(sums, row, (0, radius), PadMode::Zeros)?;
    let counts = window_counts(h, w, radius);
    let inv = Tensor::from_fn(&[n, 1, h, w], |i| lit(1.0 / counts[i % (h * w)]));
    let inv = g.constant(inv);
    g.spatial_mul(sums, inv)
}

/// Classic same-resolution guided filter, per channel.
///
/// `a = Σ_GY / (Σ_GG + eps)`, `b = Ȳ − a·Ḡ`, output `ā·G + b̄`, every mean a
/// box mean of the given radius.
pub fn classic_guided_filter<T: Real>(guide: &Tensor<T>, target: &Tensor<T>, radius: usize, eps: f64) -> Result<Tensor<T>> {
    guide.expect_same_shape(target, "classic_guided_filter")?;
    if radius == 0 || eps <= 0.0 {
        return Err(Error::Config("guided filter needs radius >= 1 and eps > 0".into()));
    }
    let mean = |t: &Tensor<T>| box_mean(t, radius);
    let mean_g = mean(guide)?;
    let mean_y = mean(target)?;
    let mean_gg = mean(&guide.zip_map(guide, "mul", |a, b| a * b)?)?;
    let mean_gy = mean(&guide.zip_map(target, "mul", |a, b| a * b)?)?;
    let n = guide.numel();
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let mg = mean_g.data()[i].as_f64();
        let my = mean_y.data()[i].as_f64();
        let var = mean_gg.data()[i].as_f64() - mg * mg;
        let cov = mean_gy.data()[i].as_f64() - mg * my;
        let ai = cov / (var + eps);
        a.push(lit::<T>(ai));
        b.push(lit::<T>(my - ai * mg));
    }
    let mean_a = mean(&Tensor::new(guide.shape(), a)?)?;
    let mean_b = mean(&Tensor::new(guide.shape(), b)?)?;
    Ok(Tensor::from_fn(guide.shape(), |i| {
        lit(mean_a.data()[i].as_f64() * guide.data()[i].as_f64() + mean_b.data()[i].as_f64())
    }))
}

#[derive(Clone, Debug)]
pub enum MeanFilter {
    Box,
    Learnt(ParamId),
}

impl MeanFilter {
    fn new<T: Real>(init: &mut Init<'_, T>, name: &str, kind: MeanFilterKind, channels: usize) -> Result<Self> {
        Ok(match kind {
            MeanFilterKind::Box => Self::Box,
            MeanFilterKind::Learnt => {
                Self::Learnt(init.full(name, &[channels, 1, 3, 3], 1.0 / 9.0, true)?)
            }
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match self {
            Self::Box => box_mean_var(g, x, 1),
            Self::Learnt(w) => {
                let w = g.param(*w);
                g.depthwise_conv2d(x, w, (1, 1), PadMode::Replicate)
            }
        }
    }
}

/// The transformation `F` producing guide features from an image.
#[derive(Clone, Debug)]
pub struct GuideTransform {
    pub stem: Conv2d,
    pub norm: AdaptiveNorm,
    pub block: AtrousResidualBlock,
    pub head: Conv2d,
}

impl GuideTransform {
    fn new<T: Real>(init: &mut Init<'_, T>, channels: usize, width: usize) -> Result<Self> {
        let mut s = init.scope("transform");
        Ok(Self {
            stem: Conv2d::new(&mut s, "stem", channels, width, 1, PadMode::Zeros)?,
            norm: AdaptiveNorm::new(&mut s, "norm")?,
            block: AtrousResidualBlock::new(&mut s, "block", width, 1, AttentionOrder::ChannelFirst)?,
            head: Conv2d::new(&mut s, "head", width, channels, 1, PadMode::Zeros)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.stem.forward(g, x)?;
        let h = self.norm.forward(g, h)?;
        let h = g.leaky_relu(h, LRELU_SLOPE);
        let h = self.block.forward(g, h)?;
        self.head.forward(g, h)
    }
}

/// `f_local`: maps `[Σ_GG, Σ_GY]` to the local slope `A_l`.
#[derive(Clone, Debug)]
pub struct LocalSolver {
    pub layers: [Conv2d; 3],
    pub norms: [AdaptiveNorm; 2],
}

impl LocalSolver {
    fn new<T: Real>(init: &mut Init<'_, T>, channels: usize, hidden: usize) -> Result<Self> {
        let mut s = init.scope("local");
        Ok(Self {
            layers: [
                Conv2d::new(&mut s, "conv1", 2 * channels, hidden, 1, PadMode::Zeros)?,
                Conv2d::new(&mut s, "conv2", hidden, hidden, 1, PadMode::Zeros)?,
                // zero start: A_l = 0, so the untrained output is an upsampled mean of Y_l
                Conv2d::zeroed(&mut s, "conv3", hidden, channels, 1, PadMode::Zeros)?,
            ],
            norms: [AdaptiveNorm::new(&mut s, "norm1")?, AdaptiveNorm::new(&mut s, "norm2")?],
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, stats: Var) -> Result<Var> {
        let mut h = stats;
        for (conv, norm) in self.layers[..2].iter().zip(&self.norms) {
            h = conv.forward(g, h)?;
            h = norm.forward(g, h)?;
            h = g.relu(h);
        }
        self.layers[2].forward(g, h)
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Solver {
    ClosedForm { eps: f64 },
    Learnt(LocalSolver),
}

/// Intermediate results of [`GuidedFilter::forward`].
#[derive(Clone, Copy, Debug)]
pub struct GuidedOutput {
    pub y_h: Var,
    pub g_h: Var,
    pub a_l: Var,
    pub b_l: Var,
    pub sigma_gg: Var,
    pub sigma_gy: Var,
}

#[derive(Clone, Debug)]
pub struct GuidedFilter {
    pub config: GuidedFilterConfig,
    pub transform: Option<GuideTransform>,
    pub mean_guide: MeanFilter,
    pub mean_target: Option<MeanFilter>,
    pub solver: Solver,
}

impl GuidedFilter {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, config: &GuidedFilterConfig, channels: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let transform = match config.transform {
            TransformKind::Identity => None,
            TransformKind::AtrousBlock => Some(GuideTransform::new(&mut s, channels, config.transform_width)?),
        };
        let mean_guide = MeanFilter::new(&mut s, "mean", config.mean_filter, channels)?;
        let mean_target = if config.shared_mean_filter {
            None
        } else {
            Some(MeanFilter::new(&mut s, "mean_target", config.mean_filter, channels)?)
        };
        let solver = match config.solver {
            SolverKind::ClosedForm => Solver::ClosedForm { eps: config.eps },
            SolverKind::Learnt => Solver::Learnt(LocalSolver::new(&mut s, channels, config.local_hidden)?),
        };
        Ok(Self {
            config: config.clone(),
            transform,
            mean_guide,
            mean_target,
            solver,
        })
    }

    pub fn guide<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        match &self.transform {
            Some(t) => t.forward(g, x),
            None => Ok(x),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x_h: Var, x_l: Var, y_l: Var) -> Result<GuidedOutput> {
        if g.shape(x_l) != g.shape(y_l) {
            return Err(Error::shape(
                "guided_filter",
                format!("X_l {:?} and Y_l {:?} differ", g.shape(x_l), g.shape(y_l)),
            ));
        }
        let g_l = self.guide(g, x_l)?;
        let g_h = self.guide(g, x_h)?;
        if g.shape(g_l) != g.shape(y_l) {
            return Err(Error::shape(
                "guided_filter",
                format!("guide {:?} and target {:?} differ", g.shape(g_l), g.shape(y_l)),
            ));
        }
        let mean_y_filter = self.mean_target.as_ref().unwrap_or(&self.mean_guide);

        let mean_g = self.mean_guide.forward(g, g_l)?;
        let mean_y = mean_y_filter.forward(g, y_l)?;
        let gg = g.mul(g_l, g_l)?;
        let gy = g.mul(g_l, y_l)?;
        let mean_gg = self.mean_guide.forward(g, gg)?;
        let mean_gy = self.mean_guide.forward(g, gy)?;
        let mg2 = g.mul(mean_g, mean_g)?;
        let sigma_gg = g.sub(mean_gg, mg2)?;
        let mgy = g.mul(mean_g, mean_y)?;
        let sigma_gy = g.sub(mean_gy, mgy)?;

        let a_l = match &self.solver {
            Solver::ClosedForm { eps } => {
                let denom = g.offset(sigma_gg, *eps);
                g.div(sigma_gy, denom)?
            }
            Solver::Learnt(local) => {
                let stats = g.concat(&[sigma_gg, sigma_gy])?;
                local.forward(g, stats)?
            }
        };
        let am = g.mul(a_l, mean_g)?;
        let b_l = g.sub(mean_y, am)?;
        let (a_l, b_l) = if self.config.smooth_coefficients {
            (self.mean_guide.forward(g, a_l)?, self.mean_guide.forward(g, b_l)?)
        } else {
            (a_l, b_l)
        };
        let y_h = apply_coefficients(g, a_l, b_l, g_h)?;
        Ok(GuidedOutput {
            y_h,
            g_h,
            a_l,
            b_l,
            sigma_gg,
            sigma_gy,
        })
    }
}

/// Bilinearly upsamples `A_l`, `b_l` to the guide's size and returns `A_h ⊙ G_h + b_h`.
pub fn apply_coefficients<T: Real>(g: &mut Graph<'_, T>, a_l: Var, b_l: Var, g_h: Var) -> Result<Var> {
    let (_, _, h, w) = g.value(g_h).dims4("guided_filter")?;
    let a_h = g.bilinear_resize(a_l, h, w)?;
    let b_h = g.bilinear_resize(b_l, h, w)?;
    let ag = g.mul(a_h, g_h)?;
    g.add(ag, b_h)
}

/// LRNet at reduced resolution followed by guided-filter upsampling.
#[derive(Clone, Debug)]
pub struct Dagf {
    pub config: DagfConfig,
    pub lrnet: LrNet,
    pub guided: GuidedFilter,
}

impl Dagf {
    pub fn new<T: Real>(init: &mut Init<'_, T>, config: &DagfConfig) -> Result<Self> {
        config.validate()?;
        let lrnet = LrNet::new(init, "lrnet", &config.lrnet)?;
        let guided = GuidedFilter::new(init, "gf", &config.guided_filter, config.lrnet.in_channels)?;
        Ok(Self {
            config: config.clone(),
            lrnet,
            guided,
        })
    }

    /// Fresh model and parameters drawn from `seed`.
    pub fn build<T: Real>(config: &DagfConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self::new(&mut Init::new(&mut store, &mut rng), config)?;
        Ok((model, store))
    }

    pub fn low_res_input<T: Real>(&self, g: &mut Graph<'_, T>, x_h: Var) -> Result<Var> {
        let (_, _, h, w) = g.value(x_h).dims4("dagf")?;
        self.config.check_input(h, w)?;
        let f = self.config.downsample_factor;
        if f == 1 {
            return Ok(x_h);
        }
        g.bilinear_resize(x_h, h / f, w / f)
    }

    /// Returns `(Y_l, guided filter output)`.
    pub fn forward_parts<T: Real>(&self, g: &mut Graph<'_, T>, x_h: Var) -> Result<(Var, GuidedOutput)> {
        let x_l = self.low_res_input(g, x_h)?;
        let y_l = self.lrnet.forward(g, x_l)?;
        let out = self.guided.forward(g, x_h, x_l, y_l)?;
        Ok((y_l, out))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x_h: Var) -> Result<Var> {
        Ok(self.forward_parts(g, x_h)?.1.y_h)
    }

    /// Unclamped model output for a `[N, C, H, W]` batch.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }

    /// Restored image clamped to `[−1, 1]`; self-ensembled when `ensemble` is set.
    pub fn infer<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>, ensemble: bool) -> Result<Tensor<T>> {
        let y = if ensemble {
            self_ensemble(x, |t| self.predict(store, t))?
        } else {
            self.predict(store, x)?
        };
        Ok(y.clamp(-1.0, 1.0))
    }
}

/// One of the eight symmetries of the square: optional transpose, then flips.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    pub transpose: bool,
    pub flip_v: bool,
    pub flip_h: bool,
}

impl Dihedral {
    pub fn all() -> [Dihedral; 8] {
        let mut out = [Dihedral {
            transpose: false,
            flip_v: false,
            flip_h: false,
        }; 8];
        for (i, d) in out.iter_mut().enumerate() {
            d.transpose = i & 4 != 0;
            d.flip_v = i & 2 != 0;
            d.flip_h = i & 1 != 0;
        }
        out
    }

    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut t = if self.transpose { x.transpose_hw() } else { x.clone() };
        if self.flip_v {
            t = t.flip_v();
        }
        if self.flip_h {
            t = t.flip_h();
        }
        t
    }

    pub fn invert<T: Real>(&self, y: &Tensor<T>) -> Tensor<T> {
        let mut t = y.clone();
        if self.flip_h {
            t = t.flip_h();
        }
        if self.flip_v {
            t = t.flip_v();
        }
        if self.transpose {
            t = t.transpose_hw();
        }
        t
    }
}

/// Mean of `inverse(model(transform(x)))` over the eight dihedral transforms,
/// accumulated in transform order.
pub fn self_ensemble<T: Real, F>(x: &Tensor<T>, mut model: F) -> Result<Tensor<T>>
where
    F: FnMut(&Tensor<T>) -> Result<Tensor<T>>,
{
    let mut acc: Option<Vec<f64>> = None;
    let mut shape = Vec::new();
    for d in Dihedral::all() {
        let y = d.invert(&model(&d.apply(x))?);
        match &mut acc {
            None => {
                shape = y.shape().to_vec();
                acc = Some(y.data().iter().map(|v| v.as_f64()).collect());
            }
            Some(a) => {
                if y.shape() != shape.as_slice() {
                    return Err(Error::shape("self_ensemble", "model output shape depends on orientation"));
                }
                for (s, v) in a.iter_mut().zip(y.data()) {
                    *s += v.as_f64();
                }
            }
        }
    }
    let acc = acc.expect("eight transforms");
    Tensor::new(&shape, acc.into_iter().map(|v| lit(v / 8.0)).collect())
}
