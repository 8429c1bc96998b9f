//! AdamW with decoupled weight decay and a cosine schedule with warm restarts.

use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied only to parameters flagged for it.
    pub weight_decay: f64,
    /// Rescale the global gradient norm to at most this value.
    pub clip_norm: Option<f64>,
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            clip_norm: None,
        }
    }
}

impl OptimHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// Global L2 norm of all accumulated gradients.
pub fn grad_norm<T: Real>(store: &ParamStore<T>) -> f64 {
    store
        .iter()
        .flat_map(|p| p.grad.data())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// One AdamW update from the gradients accumulated in `store` at learning rate `lr`.
///
/// ```text
/// θ ← θ − lr·wd·θ                (decay-flagged parameters only)
/// m ← β1 m + (1−β1) g            v ← β2 v + (1−β2) g²
/// θ ← θ − lr · m̂ / (√v̂ + eps)    m̂ = m/(1−β1^t), v̂ = v/(1−β2^t)
/// ```
pub fn adamw_step<T: Real>(store: &mut ParamStore<T>, state: &mut AdamState<T>, hyper: &OptimHyper, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Contract(format!(
            "optimizer state holds {} parameters, model has {}",
            state.m.len(),
            store.len()
        )));
    }
    let clip = match hyper.clip_norm {
        Some(max) => {
            let n = grad_norm(store);
            if n > max {
                max / n
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let decay = if p.decay { lr * hyper.weight_decay } else { 0.0 };
        let params = p.value.data_mut().iter_mut();
        for (((w, g), m), v) in params.zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let g = g.as_f64() * clip;
            let mut wf = w.as_f64();
            wf -= decay * wf;
            let mf = hyper.beta1 * m.as_f64() + (1.0 - hyper.beta1) * g;
            let vf = hyper.beta2 * v.as_f64() + (1.0 - hyper.beta2) * g * g;
            wf -= lr * (mf / bc1) / ((vf / bc2).sqrt() + hyper.eps);
            *w = lit(wf);
            *m = lit(mf);
            *v = lit(vf);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub min_lr: f64,
    /// Length of the first cycle, in epochs.
    pub first_cycle: f64,
    /// Each cycle is this many times longer than the previous one.
    pub cycle_mult: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            min_lr: 0.0,
            first_cycle: 64.0,
            cycle_mult: 2.0,
        }
    }
}

/// Position within the restart schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cycle {
    pub index: u32,
    pub start: f64,
    pub length: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_lr >= 0.0 && self.first_cycle > 0.0 && self.cycle_mult >= 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid schedule: {self:?}")))
        }
    }

    pub fn cycle_at(&self, epoch: f64) -> Cycle {
        let mut c = Cycle {
            index: 0,
            start: 0.0,
            length: self.first_cycle,
        };
        while epoch >= c.start + c.length {
            c.start += c.length;
            c.length *= self.cycle_mult;
            c.index += 1;
        }
        c
    }

    /// Learning rate at a (fractional) epoch, annealing from `base_lr` to `min_lr`.
    pub fn lr_at(&self, base_lr: f64, epoch: f64) -> f64 {
        let c = self.cycle_at(epoch.max(0.0));
        let frac = (epoch.max(0.0) - c.start) / c.length;
        self.min_lr + 0.5 * (base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    /// Epochs at which a cycle ends, up to and including `until`.
    pub fn boundaries(&self, until: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut c = self.cycle_at(0.0);
        while c.start + c.length <= until {
            out.push(c.start + c.length);
            c = self.cycle_at(c.start + c.length);
        }
        out
    }
}

/// Step counter driving the schedule: epoch = step / steps_per_epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub step: u64,
    pub steps_per_epoch: u64,
}

impl SchedulerState {
    pub fn new(steps_per_epoch: u64) -> Self {
        Self {
            step: 0,
            steps_per_epoch: steps_per_epoch.max(1),
        }
    }

    pub fn epoch(&self) -> f64 {
        self.step as f64 / self.steps_per_epoch as f64
    }

    pub fn lr(&self, cfg: &ScheduleConfig, base_lr: f64) -> f64 {
        cfg.lr_at(base_lr, self.epoch())
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_landmarks() {
        let s = ScheduleConfig::default();
        assert!((s.lr_at(3e-4, 0.0) - 3e-4).abs() < 1e-12);
        assert!((s.lr_at(3e-4, 32.0) - 1.5e-4).abs() < 1e-12);
        assert!((s.lr_at(3e-4, 64.0) - 3e-4).abs() < 1e-12);
        assert!(s.lr_at(3e-4, 63.999) < 1e-9);
        assert_eq!(s.cycle_at(64.0).length, 128.0);
        assert_eq!(s.boundaries(400.0), vec![64.0, 192.0]);
    }

    #[test]
    fn fractional_epochs() {
        let s = ScheduleConfig::default();
        let mut st = SchedulerState::new(4);
        for _ in 0..130 {
            st.advance();
        }
        assert_eq!(st.epoch(), 32.5);
        assert_eq!(st.lr(&s, 3e-4), s.lr_at(3e-4, 32.5));
    }

    #[test]
    fn weight_decay_skips_flagged_parameters() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::full(&[1], 1.0), true).unwrap();
        let b = store.add("b", Tensor::full(&[1], 1.0), false).unwrap();
        let mut st = AdamState::new(&store);
        let hyper = OptimHyper {
            weight_decay: 0.5,
            ..OptimHyper::default()
        };
        adamw_step(&mut store, &mut st, &hyper, 0.1).unwrap();
        // zero gradient: only decay moves the weights
        assert!((store.get(w).value.data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(store.get(b).value.data()[0], 1.0);
    }

    #[test]
    fn first_adam_step_is_lr_times_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("b", Tensor::full(&[2], 0.0), false).unwrap();
        store.get_mut(id).grad = Tensor::new(&[2], vec![3.0, -0.01]).unwrap();
        let mut st = AdamState::new(&store);
        adamw_step(&mut store, &mut st, &OptimHyper::default(), 1e-3).unwrap();
        let v = store.get(id).value.data();
        assert!((v[0] + 1e-3).abs() < 1e-9 && (v[1] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("b", Tensor::full(&[1], 0.0), false).unwrap();
        store.get_mut(id).grad = Tensor::full(&[1], 100.0);
        assert_eq!(grad_norm(&store), 100.0);
        let mut st = AdamState::new(&store);
        let hyper = OptimHyper {
            clip_norm: Some(1.0),
            ..OptimHyper::default()
        };
        adamw_step(&mut store, &mut st, &hyper, 1e-3).unwrap();
        assert!((st.m[0].data()[0] - 0.1).abs() < 1e-12);
    }
}
