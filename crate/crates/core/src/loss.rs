//! Training objectives: pixel L1 and the contextual-bilateral (CoBi) loss.

use serde::{Deserialize, Serialize};

use crate::autograd::{CustomOp, Graph, Var};
use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// Mean absolute error.
pub fn l1_loss<T: Real>(g: &mut Graph<'_, T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let a = g.abs(d);
    Ok(g.mean_all(a))
}

/// L1 on plain tensors, accumulated in f64.
pub fn l1<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    pred.expect_same_shape(target, "l1")?;
    let n = pred.numel().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .sum::<f64>()
        / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CobiConfig {
    /// Weight of the squared spatial distance.
    pub gamma: f64,
    /// Added to every feature before cosine distances, so that images in
    /// `[−1, 1]` do not produce near-zero vectors.
    pub shift: f64,
    /// Restricts the search to a `(2r+1)²` neighbourhood; `None` searches the whole image.
    pub radius: Option<usize>,
}

impl Default for CobiConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            shift: 1.0,
            radius: None,
        }
    }
}

/// Norms below this get it added to the cosine denominator.
pub const COSINE_EPS: f64 = 1e-8;

struct CosineTerms {
    dot: f64,
    pp: f64,
    denom: f64,
    /// Whether the denominator was regularised.
    degenerate: bool,
}

fn cosine_terms(p: &[f64], q: &[f64]) -> CosineTerms {
    let (mut dot, mut pp, mut qq) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        dot += a * b;
        pp += a * a;
        qq += b * b;
    }
    let mut denom = (pp * qq).sqrt();
    let degenerate = pp.sqrt() < COSINE_EPS || qq.sqrt() < COSINE_EPS;
    if degenerate {
        denom += COSINE_EPS;
    }
    CosineTerms { dot, pp, denom, degenerate }
}

/// Cosine distance `1 − ⟨p,q⟩ / √(|p|²|q|²)`, clamped at zero.
///
/// Identical vectors are at distance 0 exactly. When either norm is below
/// [`COSINE_EPS`] the denominator gets `COSINE_EPS` added, so black pixels
/// sit at distance ≈ 1 from everything but themselves.
pub fn cosine_distance(p: &[f64], q: &[f64]) -> f64 {
    if p == q {
        return 0.0;
    }
    let t = cosine_terms(p, q);
    (1.0 - t.dot / t.denom).max(0.0)
}

struct Features {
    c: usize,
    h: usize,
    w: usize,
    /// `[N, H, W, C]`, shifted.
    data: Vec<f64>,
}

impl Features {
    fn new<T: Real>(x: &Tensor<T>, shift: f64) -> Result<(usize, Self)> {
        let (n, c, h, w) = x.dims4("cobi")?;
        let mut data = vec![0.0; n * c * h * w];
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        data[((b * h + y) * w + xx) * c + ch] = x.data()[((b * c + ch) * h + y) * w + xx].as_f64() + shift;
                    }
                }
            }
        }
        Ok((n, Self { c, h, w, data }))
    }

    fn at(&self, b: usize, y: usize, x: usize) -> &[f64] {
        let o = ((b * self.h + y) * self.w + x) * self.c;
        &self.data[o..o + self.c]
    }
}

/// Per-pixel matches of a CoBi evaluation.
#[derive(Clone, Debug)]
pub struct CobiMatches {
    pub value: f64,
    /// For every `(n, i, j)` in row-major order, the matched `(k, l)`.
    pub argmin: Vec<(usize, usize)>,
}

/// Evaluates `(1/HW) Σ_ij min_kl [D_cos(p_ij, q_kl) + γ((i−k)² + (j−l)²)]`,
/// averaged over the batch.
///
/// Features are the channel vectors at each pixel. Sums run in row-major
/// pixel order in f64; ties keep the first candidate in row-major order.
pub fn cobi_matches<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &CobiConfig) -> Result<CobiMatches> {
    pred.expect_same_shape(target, "cobi")?;
    if cfg.gamma.is_nan() || cfg.gamma < 0.0 {
        return Err(Error::Config(format!("CoBi gamma must be >= 0, got {}", cfg.gamma)));
    }
    let (n, p) = Features::new(pred, cfg.shift)?;
    let (_, q) = Features::new(target, cfg.shift)?;
    let (h, w) = (p.h, p.w);
    if n == 0 || h == 0 || w == 0 || p.c == 0 {
        return Err(Error::shape("cobi", "empty image"));
    }
    let mut argmin = Vec::with_capacity(n * h * w);
    let mut total = 0.0;
    for b in 0..n {
        let mut sum = 0.0;
        for i in 0..h {
            let (k0, k1) = window(i, h, cfg.radius);
            for j in 0..w {
                let (l0, l1) = window(j, w, cfg.radius);
                let pij = p.at(b, i, j);
                let mut best = f64::INFINITY;
                let mut arg = (i, j);
                for k in k0..k1 {
                    let dy = i.abs_diff(k);
                    for l in l0..l1 {
                        let dx = j.abs_diff(l);
                        let spatial = cfg.gamma * ((dy * dy + dx * dx) as f64);
                        let cost = cosine_distance(pij, q.at(b, k, l)) + spatial;
                        if cost < best {
                            best = cost;
                            arg = (k, l);
                        }
                    }
                }
                sum += best;
                argmin.push(arg);
            }
        }
        total += sum / (h * w) as f64;
    }
    Ok(CobiMatches {
        value: total / n as f64,
        argmin,
    })
}

fn window(i: usize, n: usize, radius: Option<usize>) -> (usize, usize) {
    match radius {
        None => (0, n),
        Some(r) => (i.saturating_sub(r), (i + r + 1).min(n)),
    }
}

pub fn cobi<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, cfg: &CobiConfig) -> Result<f64> {
    Ok(cobi_matches(pred, target, cfg)?.value)
}

/// Differentiable CoBi; the gradient flows through the matched pairs.
pub fn cobi_loss<T: Real>(g: &mut Graph<'_, T>, pred: Var, target: Var, cfg: &CobiConfig) -> Result<Var> {
    let m = cobi_matches(g.value(pred), g.value(target), cfg)?;
    let value = Tensor::scalar(lit(m.value));
    Ok(g.custom(
        &[pred, target],
        value,
        Box::new(CobiBackward {
            argmin: m.argmin,
            shift: cfg.shift,
        }),
    ))
}

struct CobiBackward {
    argmin: Vec<(usize, usize)>,
    shift: f64,
}

/// `∂D/∂p` for `D = 1 − ⟨p,q⟩/√(|p|²|q|²)`; zero where `D` is clamped or degenerate.
fn cosine_grad(p: &[f64], q: &[f64], out: &mut [f64]) {
    let t = cosine_terms(p, q);
    if p == q || t.degenerate || 1.0 - t.dot / t.denom <= 0.0 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    for ((o, a), b) in out.iter_mut().zip(p).zip(q) {
        *o = -(b - t.dot / t.pp * a) / t.denom;
    }
}

impl<T: Real> CustomOp<T> for CobiBackward {
    fn name(&self) -> &'static str {
        "cobi"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (n, p) = Features::new(inputs[0], self.shift)?;
        let (_, q) = Features::new(inputs[1], self.shift)?;
        let (c, h, w) = (p.c, p.h, p.w);
        let scale = grad_out.item()?.as_f64() / (n * h * w) as f64;
        let mut dp = vec![0.0; n * c * h * w];
        let mut dq = vec![0.0; n * c * h * w];
        let mut gp = vec![0.0; c];
        let mut gq = vec![0.0; c];
        let idx = |b: usize, ch: usize, y: usize, x: usize| ((b * c + ch) * h + y) * w + x;
        for b in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let (k, l) = self.argmin[(b * h + i) * w + j];
                    let (pv, qv) = (p.at(b, i, j), q.at(b, k, l));
                    cosine_grad(pv, qv, &mut gp);
                    cosine_grad(qv, pv, &mut gq);
                    for ch in 0..c {
                        dp[idx(b, ch, i, j)] += scale * gp[ch];
                        dq[idx(b, ch, k, l)] += scale * gq[ch];
                    }
                }
            }
        }
        let shape = inputs[0].shape();
        let to_t = |v: Vec<f64>| Tensor::new(shape, v.into_iter().map(lit).collect());
        Ok(vec![Some(to_t(dp)?), Some(to_t(dq)?)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_distance_cases() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-2.0, 0.0]), 2.0);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine_distance(&[1e-12, 0.0], &[1e-12, 0.0]), 0.0);
    }

    #[test]
    fn permuted_pixels_match_exactly() {
        // target holds the prediction's pixels in reverse order; with γ = 0
        // every pixel finds its exact copy
        let p = Tensor::<f64>::from_fn(&[1, 2, 1, 4], |i| [0.1, 0.9, 0.4, 0.7, 0.3, 0.2, 0.8, 0.5][i]);
        let q = Tensor::<f64>::from_fn(&[1, 2, 1, 4], |i| {
            let (c, x) = (i / 4, i % 4);
            p.data()[c * 4 + 3 - x]
        });
        let cfg = CobiConfig {
            gamma: 0.0,
            ..CobiConfig::default()
        };
        let m = cobi_matches(&p, &q, &cfg).unwrap();
        assert_eq!(m.argmin, vec![(0, 3), (0, 2), (0, 1), (0, 0)]);
        assert_eq!(m.value, 0.0);
        // a spatial penalty makes the far matches cost something
        let cfg = CobiConfig {
            gamma: 0.5,
            ..CobiConfig::default()
        };
        assert!(cobi(&p, &q, &cfg).unwrap() > 0.0);
    }

    #[test]
    fn l1_loss_value_and_gradient() {
        let mut g = Graph::detached();
        let p = g.variable(Tensor::new(&[4], vec![1.0f64, -2.0, 3.0, 0.5]).unwrap());
        let t = g.constant(Tensor::new(&[4], vec![0.0, 0.0, 5.0, 0.5]).unwrap());
        let l = l1_loss(&mut g, p, t).unwrap();
        assert!((g.value(l).item().unwrap() - 1.25).abs() < 1e-15);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(p).unwrap().data()[..3], [0.25, -0.25, -0.25]);
    }

    #[test]
    fn negative_gamma_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        let cfg = CobiConfig {
            gamma: -1.0,
            ..CobiConfig::default()
        };
        assert!(cobi(&x, &x, &cfg).is_err());
    }
}
