//! Learnt measurement simulator: a shallow LRNet trained with CoBi to turn
//! clean images into measurement-like images, used to synthesise
//! pre-training pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Var};
use crate::checkpoint::Checkpoint;
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::loss::{cobi_loss, CobiConfig};
use crate::nn::{Init, LrNet, LrNetConfig};
use crate::optim::{adamw_step, AdamState, OptimHyper};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub lrnet: LrNetConfig,
    pub cobi: CobiConfig,
    pub optim: OptimHyper,
    pub steps: usize,
    /// Random crop fed to each step, keeping the exhaustive CoBi search cheap.
    pub crop: Option<[usize; 2]>,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            lrnet: LrNetConfig::tiny(),
            cobi: CobiConfig::default(),
            optim: OptimHyper {
                lr: 1e-3,
                ..OptimHyper::default()
            },
            steps: 200,
            crop: Some([16, 16]),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Simulator {
    pub config: SimulateConfig,
    pub net: LrNet,
    pub store: ParamStore<f32>,
}

impl Simulator {
    pub fn new(config: SimulateConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = LrNet::new(&mut Init::new(&mut store, &mut rng), "sim", &config.lrnet)?;
        Ok(Self { config, net, store })
    }

    /// `x + LRNet(x)`.
    pub fn forward(&self, g: &mut Graph<'_, f32>, x: Var) -> Result<Var> {
        let r = self.net.forward(g, x)?;
        g.add(x, r)
    }

    /// Simulated measurement of a `[3, H, W]` or `[N, 3, H, W]` image, clamped to `[−1, 1]`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let batched = x.rank() == 3;
        let input = if batched { x.unsqueeze0() } else { x.clone() };
        let mut g = Graph::new(&self.store);
        let xv = g.constant(input);
        let y = self.forward(&mut g, xv)?;
        let out = g.value(y).clamp(-1.0, 1.0);
        if batched {
            out.index0(0)
        } else {
            Ok(out)
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.add_params(&self.store);
        ck
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateReport {
    /// CoBi of every step, before its update.
    pub losses: Vec<f64>,
    /// CoBi over all full-size pairs before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn crop(t: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Tensor {
    let (sh, sw) = (t.shape()[1], t.shape()[2]);
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        t.data()[(c * sh + top + y) * sw + left + x]
    })
}

fn mean_cobi(sim: &Simulator, clean: &[Tensor], measured: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for (c, m) in clean.iter().zip(measured) {
        total += crate::loss::cobi(&sim.apply(&c.unsqueeze0())?, &m.unsqueeze0(), &sim.config.cobi)?;
    }
    Ok(total / clean.len() as f64)
}

/// Trains a simulator mapping `clean[i]` towards the style of `measured[i]`.
///
/// Pairs need equal sizes but not alignment; images are `[3, H, W]` in `[−1, 1]`.
pub fn simulate_train(clean: &[Tensor], measured: &[Tensor], config: SimulateConfig) -> Result<(Simulator, SimulateReport)> {
    if clean.is_empty() || measured.is_empty() {
        return Err(Error::Data("simulation needs clean and measured images".into()));
    }
    if clean.len() != measured.len() {
        return Err(Error::Data(format!(
            "{} clean images but {} measurements",
            clean.len(),
            measured.len()
        )));
    }
    for (c, m) in clean.iter().zip(measured) {
        c.expect_same_shape(m, "simulate_train")?;
        if c.rank() != 3 {
            return Err(Error::shape("simulate_train", format!("expected [3, H, W], got {:?}", c.shape())));
        }
    }
    let mut sim = Simulator::new(config)?;
    let cfg = sim.config.clone();
    let mut adam = AdamState::new(&sim.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51u64);
    let initial_loss = mean_cobi(&sim, clean, measured)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let i = rng.random_range(0..clean.len());
        let (c, m) = (&clean[i], &measured[i]);
        let (h, w) = (c.shape()[1], c.shape()[2]);
        let (c, m) = match cfg.crop {
            Some([ch, cw]) if ch <= h && cw <= w && (ch, cw) != (h, w) => {
                let top = rng.random_range(0..=h - ch);
                let left = rng.random_range(0..=w - cw);
                (crop(c, top, left, ch, cw), crop(m, top, left, ch, cw))
            }
            _ => (c.clone(), m.clone()),
        };
        let (grads, value) = {
            let mut g = Graph::new(&sim.store);
            let x = g.constant(c.unsqueeze0());
            let y = g.constant(m.unsqueeze0());
            let p = sim.forward(&mut g, x)?;
            let loss = cobi_loss(&mut g, p, y, &cfg.cobi)?;
            let value = f64::from(g.value(loss).item()?);
            (g.backward(loss)?, value)
        };
        losses.push(value);
        sim.store.zero_grad();
        sim.store.accumulate(&grads)?;
        adamw_step(&mut sim.store, &mut adam, &cfg.optim, cfg.optim.lr)?;
    }
    let final_loss = mean_cobi(&sim, clean, measured)?;
    Ok((
        sim,
        SimulateReport {
            losses,
            initial_loss,
            final_loss,
        },
    ))
}

/// Simulated degraded versions of `clean`, paired with the originals.
pub fn simulate_pairs(sim: &Simulator, clean: &[(String, Tensor)]) -> Result<Vec<ImagePair>> {
    clean
        .iter()
        .map(|(id, c)| ImagePair::new(id.clone(), sim.apply(c)?, c.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize, synth_clean, synth_degrade, DegradeProfile};

    fn task(n: usize) -> (Vec<Tensor>, Vec<Tensor>) {
        let profile = DegradeProfile {
            noise_sigma: 0.0,
            stripe_depth: 0.0,
            blur_sigma: 1.0,
            ..DegradeProfile::toled_like()
        };
        let clean: Vec<Tensor> = (0..n).map(|i| normalize(&synth_clean(16, 16, i as u64))).collect();
        let measured = clean
            .iter()
            .enumerate()
            .map(|(i, c)| synth_degrade(c, &profile, i as u64).unwrap())
            .collect();
        (clean, measured)
    }

    fn quick(steps: usize) -> SimulateConfig {
        SimulateConfig {
            steps,
            seed: 3,
            ..SimulateConfig::default()
        }
    }

    #[test]
    fn cobi_halves_on_mild_blur() {
        let (clean, measured) = task(2);
        let (_, report) = simulate_train(&clean, &measured, quick(150)).unwrap();
        assert!(
            report.final_loss <= 0.5 * report.initial_loss,
            "{} -> {}",
            report.initial_loss,
            report.final_loss
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let (clean, measured) = task(2);
        let (_, a) = simulate_train(&clean, &measured, quick(5)).unwrap();
        let (_, b) = simulate_train(&clean, &measured, quick(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_or_mismatched_sets_rejected() {
        let (clean, measured) = task(2);
        assert!(matches!(simulate_train(&[], &[], quick(1)), Err(Error::Data(_))));
        assert!(simulate_train(&clean, &measured[..1], quick(1)).is_err());
    }

    #[test]
    fn pairs_keep_ids_and_shapes() {
        let (clean, _) = task(2);
        let sim = Simulator::new(quick(0)).unwrap();
        let named: Vec<_> = clean.iter().enumerate().map(|(i, c)| (format!("c{i}"), c.clone())).collect();
        let pairs = simulate_pairs(&sim, &named).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].id, "c1");
        assert_eq!(pairs[0].degraded.shape(), &[3, 16, 16]);
        assert!(pairs[0].degraded.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
