//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum tolerated `|analytic − numeric| / max(1, |analytic|)`.
    pub tol: f64,
    /// Check at most this many randomly chosen coordinates per parameter.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-4,
            tol: 1e-3,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error > self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

/// Evaluates `loss` on the current parameter values, without a backward pass.
fn evaluate<F>(store: &ParamStore<f64>, loss: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let v = loss(&mut g)?;
    g.value(v).item()
}

/// Compares the backward pass of `loss` against central differences for every
/// parameter in `params`.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    cfg: &GradCheckConfig,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<'_, f64>) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::new(&*store);
        let v = loss(&mut g)?;
        g.backward(v)?
    };
    check_against(store, params, &grads, cfg, loss)
}

/// Compares caller-supplied analytic gradients against central differences.
pub fn check_against<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    analytic: &Gradients<f64>,
    cfg: &GradCheckConfig,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        tol: cfg.tol,
        params: Vec::with_capacity(params.len()),
    };
    for &id in params {
        let numel = store.get(id).value.numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < numel => {
                let mut c = sample(&mut rng, numel, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..numel).collect(),
        };
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in coords {
            let a = analytic.param(id).map_or(0.0, |g| g.data()[i]);
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + cfg.h;
            let plus = evaluate(store, &mut loss)?;
            store.get_mut(id).value.data_mut()[i] = orig - cfg.h;
            let minus = evaluate(store, &mut loss)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > check.max_rel_error || !err.is_finite() {
                check.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_function_has_zero_error() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", Tensor::scalar(0.7), true).unwrap();
        let report = grad_check(&mut store, &[p], &GradCheckConfig::default(), |g| {
            let v = g.param(p);
            Ok(g.scale(v, 3.0))
        })
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-10);
    }

    #[test]
    fn doubled_gradient_is_flagged() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap(), true).unwrap();
        let loss = |g: &mut Graph<'_, f64>| {
            let v = g.param(p);
            let sq = g.mul(v, v)?;
            Ok(g.mean_all(sq))
        };
        let mut grads = {
            let mut g = Graph::new(&store);
            let v = loss(&mut g).unwrap();
            g.backward(v).unwrap()
        };
        for (_, t) in grads.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        }
        let report = check_against(&mut store, &[p], &grads, &GradCheckConfig::default(), loss).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
    }
}
