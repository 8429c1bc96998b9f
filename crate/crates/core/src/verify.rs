//! Seeded gradient-check suites over ops, blocks and the full model.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{check_against, grad_check, GradCheckConfig, GradCheckReport, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::guided::{box_mean_var, Dagf, DagfConfig, GuidedFilter, GuidedFilterConfig};
use crate::kernels::{Conv2dSpec, PadMode};
use crate::loss::{cobi_loss, l1_loss, CobiConfig};
use crate::nn::{
    AdaptiveNorm, AtrousResidualBlock, AttentionOrder, ChannelAttention, GatedFusion, Init, LrNet, LrNetConfig,
    PixelAttention, SmoothedAtrousConv,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Blocks,
    E2e,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Ops, Scope::Blocks, Scope::E2e];
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Ops => "ops",
            Scope::Blocks => "blocks",
            Scope::E2e => "e2e",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "blocks" => Ok(Scope::Blocks),
            "e2e" => Ok(Scope::E2e),
            other => Err(Error::Config(format!("unknown gradcheck scope `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
    pub seconds: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    pub fn summary(&self) -> String {
        let worst = self
            .report
            .params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
        let detail = worst.map_or(String::new(), |w| {
            format!(" worst {} (analytic {:.6e}, numeric {:.6e})", w.name, w.analytic, w.numeric)
        });
        format!(
            "{} {}: max rel err {:.2e} over {} tensors in {:.2}s{}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.report.max_rel_error(),
            self.report.params.len(),
            self.seconds,
            detail
        )
    }
}

/// Finite-difference step. Small enough that a perturbation rarely straddles
/// a ReLU kink, large enough that f64 rounding stays far below the tolerance.
pub const STEP: f64 = 1e-6;

/// Per-case fixture: inputs are registered as parameters so one check covers
/// input and weight gradients alike.
struct Case {
    store: ParamStore<f64>,
    rng: ChaCha8Rng,
    cfg: GradCheckConfig,
}

impl Case {
    fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg: GradCheckConfig {
                h: STEP,
                max_coords: Some(24),
                seed,
                ..GradCheckConfig::default()
            },
        }
    }

    fn input(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let t = Tensor::randn(shape, 1.0, &mut self.rng);
        self.store.add(format!("input.{name}"), t, false).expect("unique input name")
    }

    fn init(&mut self) -> Init<'_, f64> {
        Init::new(&mut self.store, &mut self.rng)
    }

    /// Moves every non-input parameter off its structured initial value so
    /// zero-initialised layers do not hide gradients.
    fn jitter(&mut self, sigma: f64) {
        for p in self.store.iter_mut().filter(|p| !p.name.starts_with("input.")) {
            let noise = Tensor::<f64>::randn(p.value.shape(), sigma, &mut self.rng);
            p.value.add_assign(&noise).expect("same shape");
        }
    }

    /// Checks `Σ W ⊙ f(...)` for a fixed random `W`.
    fn run<F>(mut self, name: &str, mut f: F) -> Result<CaseResult>
    where
        F: FnMut(&mut Graph<'_, f64>) -> Result<Var>,
    {
        let start = Instant::now();
        let shape = {
            let mut g = Graph::new(&self.store);
            let out = f(&mut g)?;
            g.shape(out).to_vec()
        };
        let weights = Tensor::<f64>::randn(&shape, 1.0, &mut self.rng);
        let n = weights.numel() as f64;
        let ids: Vec<_> = self.store.ids().collect();
        let report = grad_check(&mut self.store, &ids, &self.cfg, |g| {
            let out = f(g)?;
            if g.shape(out).is_empty() || g.value(out).numel() == 1 {
                return Ok(out);
            }
            let w = g.constant(weights.clone());
            let prod = g.mul(out, w)?;
            let mean = g.mean_all(prod);
            Ok(g.scale(mean, n))
        })?;
        Ok(CaseResult {
            name: name.into(),
            report,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// Runs every case of `scope`.
pub fn run_scope(scope: Scope, seed: u64) -> Result<Vec<CaseResult>> {
    match scope {
        Scope::Ops => ops(seed),
        Scope::Blocks => blocks(seed),
        Scope::E2e => e2e(seed),
    }
}

fn ops(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    let s = |k: u64| seed.wrapping_mul(1000).wrapping_add(k);

    for (k, (name, spec)) in [
        ("conv2d/zeros", Conv2dSpec::new(1, 2, 2)),
        ("conv2d/stride2", Conv2dSpec::new(2, 1, 1)),
        ("conv2d/replicate", Conv2dSpec::new(1, 2, 2).with_pad_mode(PadMode::Replicate)),
    ]
    .into_iter()
    .enumerate()
    {
        let mut c = Case::new(s(k as u64));
        let (x, w, b) = (c.input("x", &[2, 4, 9, 9]), c.input("w", &[3, 4, 3, 3]), c.input("b", &[3]));
        out.push(c.run(name, |g| {
            let (x, w, b) = (g.param(x), g.param(w), g.param(b));
            g.conv2d(x, w, Some(b), spec)
        })?);
    }
    for (k, mode) in [PadMode::Zeros, PadMode::Replicate].into_iter().enumerate() {
        let mut c = Case::new(s(10 + k as u64));
        let (x, w, pb) = (c.input("x", &[1, 3, 8, 8]), c.input("w", &[4, 3, 3, 3]), c.input("pb", &[4]));
        out.push(c.run(&format!("conv2d_prebias/{mode:?}").to_lowercase(), |g| {
            let (x, w, pb) = (g.param(x), g.param(w), g.param(pb));
            g.conv2d_prebias(x, w, None, Some(pb), Conv2dSpec::new(1, 2, 2).with_pad_mode(mode))
        })?);
    }
    for (k, (name, kc, pad, mode)) in [
        ("depthwise/shared_replicate", 1, (2, 0), PadMode::Replicate),
        ("depthwise/per_channel_zeros", 3, (1, 1), PadMode::Zeros),
    ]
    .into_iter()
    .enumerate()
    {
        let mut c = Case::new(s(20 + k as u64));
        let kh = if pad.1 == 0 { 5 } else { 3 };
        let kw = if pad.1 == 0 { 1 } else { 3 };
        let (x, w) = (c.input("x", &[2, 3, 8, 8]), c.input("w", &[kc, 1, kh, kw]));
        out.push(c.run(name, |g| {
            let (x, w) = (g.param(x), g.param(w));
            g.depthwise_conv2d(x, w, pad, mode)
        })?);
    }
    {
        let mut c = Case::new(s(30));
        let x = c.input("x", &[1, 3, 8, 8]);
        out.push(c.run("pixel_unshuffle", |g| {
            let x = g.param(x);
            g.pixel_unshuffle(x, 2)
        })?);
        let mut c = Case::new(s(31));
        let x = c.input("x", &[1, 12, 4, 4]);
        out.push(c.run("pixel_shuffle", |g| {
            let x = g.param(x);
            g.pixel_shuffle(x, 2)
        })?);
    }
    for (k, (name, from, to)) in [("bilinear/down", [8, 16], [4, 8]), ("bilinear/up", [4, 8], [8, 16]), ("bilinear/odd", [5, 7], [9, 4])]
        .into_iter()
        .enumerate()
    {
        let mut c = Case::new(s(40 + k as u64));
        let x = c.input("x", &[2, 3, from[0], from[1]]);
        out.push(c.run(name, |g| {
            let x = g.param(x);
            g.bilinear_resize(x, to[0], to[1])
        })?);
    }
    {
        let mut c = Case::new(s(50));
        let (a, b) = (c.input("a", &[2, 3, 4, 4]), c.input("b", &[2, 3, 4, 4]));
        out.push(c.run("elementwise", |g| {
            let (a, b) = (g.param(a), g.param(b));
            let sum = g.add(a, b)?;
            let diff = g.sub(a, b)?;
            let prod = g.mul(sum, diff)?;
            let bb = g.mul(b, b)?;
            let den = g.offset(bb, 0.5);
            let q = g.div(prod, den)?;
            let sc = g.scale(q, 0.7);
            g.sum(&[sc, a, b])
        })?);
    }
    {
        let mut c = Case::new(s(51));
        let x = c.input("x", &[2, 3, 4, 4]);
        out.push(c.run("activations", |g| {
            let x = g.param(x);
            let a = g.sigmoid(x);
            let b = g.leaky_relu(x, 0.2);
            let r = g.relu(x);
            let d = g.abs(x);
            g.concat(&[a, b, r, d])
        })?);
    }
    {
        let mut c = Case::new(s(52));
        let x = c.input("x", &[2, 4, 6, 6]);
        out.push(c.run("instance_norm", |g| {
            let x = g.param(x);
            g.instance_norm(x, 1e-5)
        })?);
    }
    {
        let mut c = Case::new(s(53));
        let (x, m, sc) = (c.input("x", &[2, 4, 5, 5]), c.input("m", &[2, 1, 5, 5]), c.input("s", &[1]));
        out.push(c.run("pooling_and_broadcast", |g| {
            let (x, m, sc) = (g.param(x), g.param(m), g.param(sc));
            let pooled = g.global_avg_pool(x)?;
            let cm = g.channel_mul(x, pooled)?;
            let sm = g.spatial_mul(cm, m)?;
            let part = g.narrow(sm, 1, 2)?;
            let flat = g.reshape(part, &[2, 2, 25, 1])?;
            let flat = g.reshape(flat, &[2, 2, 5, 5])?;
            g.scale_by(flat, sc)
        })?);
    }
    {
        let mut c = Case::new(s(54));
        let x = c.input("x", &[1, 3, 7, 9]);
        out.push(c.run("box_mean", |g| {
            let x = g.param(x);
            box_mean_var(g, x, 1)
        })?);
    }
    {
        let mut c = Case::new(s(55));
        let (p, t) = (c.input("pred", &[2, 3, 4, 4]), c.input("target", &[2, 3, 4, 4]));
        out.push(c.run("l1_loss", |g| {
            let (p, t) = (g.param(p), g.param(t));
            l1_loss(g, p, t)
        })?);
    }
    for (k, gamma) in [0.0, 0.5].into_iter().enumerate() {
        let mut c = Case::new(s(56 + k as u64));
        let (p, t) = (c.input("pred", &[1, 3, 5, 5]), c.input("target", &[1, 3, 5, 5]));
        let cfg = CobiConfig {
            gamma,
            ..CobiConfig::default()
        };
        out.push(c.run(&format!("cobi_loss/gamma{gamma}"), |g| {
            let (p, t) = (g.param(p), g.param(t));
            cobi_loss(g, p, t, &cfg)
        })?);
    }
    Ok(out)
}

fn blocks(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    let s = |k: u64| seed.wrapping_mul(1000).wrapping_add(500 + k);

    for (k, d) in [1, 2].into_iter().enumerate() {
        let mut c = Case::new(s(k as u64));
        let x = c.input("x", &[1, 4, 8, 8]);
        let m = SmoothedAtrousConv::new(&mut c.init(), "sac", 4, 3, d)?;
        c.jitter(0.1);
        out.push(c.run(&format!("smoothed_atrous_conv/d{d}"), |g| {
            let x = g.param(x);
            m.forward(g, x)
        })?);
    }
    {
        let mut c = Case::new(s(10));
        let x = c.input("x", &[2, 4, 6, 6]);
        let m = AdaptiveNorm::new(&mut c.init(), "an")?;
        c.jitter(0.3);
        out.push(c.run("adaptive_norm", |g| {
            let x = g.param(x);
            m.forward(g, x)
        })?);
    }
    {
        let mut c = Case::new(s(11));
        let x = c.input("x", &[2, 8, 6, 6]);
        let m = ChannelAttention::new(&mut c.init(), "ca", 8)?;
        c.jitter(0.1);
        out.push(c.run("channel_attention", |g| {
            let x = g.param(x);
            m.forward(g, x)
        })?);
    }
    {
        let mut c = Case::new(s(12));
        let x = c.input("x", &[2, 8, 6, 6]);
        let m = PixelAttention::new(&mut c.init(), "pa", 8)?;
        c.jitter(0.1);
        out.push(c.run("pixel_attention", |g| {
            let x = g.param(x);
            m.forward(g, x)
        })?);
    }
    {
        let mut c = Case::new(s(13));
        let xs = [c.input("f0", &[1, 8, 6, 6]), c.input("f1", &[1, 8, 6, 6])];
        let m = GatedFusion::new(&mut c.init(), "gate", 8, 2)?;
        c.jitter(0.1);
        out.push(c.run("gated_fusion", |g| {
            let fs: Vec<_> = xs.iter().map(|&x| g.param(x)).collect();
            m.forward(g, &fs)
        })?);
    }
    for (k, order) in [AttentionOrder::ChannelFirst, AttentionOrder::PixelFirst].into_iter().enumerate() {
        let mut c = Case::new(s(20 + k as u64));
        let x = c.input("x", &[1, 8, 8, 8]);
        let m = AtrousResidualBlock::new(&mut c.init(), "block", 8, 1, order)?;
        c.jitter(0.05);
        out.push(c.run(&format!("atrous_residual_block/{order:?}").to_lowercase(), |g| {
            let x = g.param(x);
            m.forward(g, x)
        })?);
    }
    {
        let mut c = Case::new(s(30));
        let x = c.input("x", &[1, 3, 16, 16]);
        let cfg = LrNetConfig {
            channels: 8,
            ..LrNetConfig::tiny()
        };
        let m = LrNet::new(&mut c.init(), "lrnet", &cfg)?;
        c.jitter(0.05);
        out.push(c.run("lrnet", |g| {
            let x = g.param(x);
            m.forward(g, x)
        })?);
    }
    for (k, (name, cfg)) in [
        ("guided_filter/learnt", GuidedFilterConfig { transform_width: 8, local_hidden: 8, ..GuidedFilterConfig::default() }),
        ("guided_filter/closed_form", GuidedFilterConfig { eps: 1e-2, ..GuidedFilterConfig::classic(1e-2) }),
    ]
    .into_iter()
    .enumerate()
    {
        let mut c = Case::new(s(40 + k as u64));
        let (xh, xl, yl) = (c.input("x_h", &[1, 3, 16, 16]), c.input("x_l", &[1, 3, 8, 8]), c.input("y_l", &[1, 3, 8, 8]));
        let m = GuidedFilter::new(&mut c.init(), "gf", &cfg, 3)?;
        c.jitter(0.05);
        out.push(c.run(name, |g| {
            let (xh, xl, yl) = (g.param(xh), g.param(xl), g.param(yl));
            Ok(m.forward(g, xh, xl, yl)?.y_h)
        })?);
    }
    Ok(out)
}

fn e2e(seed: u64) -> Result<Vec<CaseResult>> {
    let mut c = Case::new(seed.wrapping_mul(1000).wrapping_add(900));
    let (x, y) = (c.input("x", &[2, 3, 16, 16]), c.input("y", &[2, 3, 16, 16]));
    let m = Dagf::new(&mut c.init(), &DagfConfig::tiny())?;
    c.jitter(0.05);
    let dagf = c.run("dagf_tiny/l1", |g| {
        let (x, y) = (g.param(x), g.param(y));
        let pred = m.forward(g, x)?;
        l1_loss(g, pred, y)
    })?;
    Ok(vec![dagf])
}

/// Feeds a deliberately doubled gradient to the checker; returns `true` when
/// the checker rejects it.
pub fn corrupted_gradient_detected(seed: u64) -> Result<bool> {
    let mut c = Case::new(seed);
    let x = c.input("x", &[1, 2, 4, 4]);
    let loss = |g: &mut Graph<'_, f64>| {
        let v = g.param(x);
        let s = g.sigmoid(v);
        let sq = g.mul(s, v)?;
        Ok(g.mean_all(sq))
    };
    let mut grads = {
        let mut g = Graph::new(&c.store);
        let v = loss(&mut g)?;
        g.backward(v)?
    };
    grads.scale(2.0);
    let cfg = GradCheckConfig {
        tol: 1e-3,
        h: STEP,
        max_coords: None,
        seed,
    };
    let report = check_against(&mut c.store, &[x], &grads, &cfg, loss)?;
    Ok(!report.passed())
}
