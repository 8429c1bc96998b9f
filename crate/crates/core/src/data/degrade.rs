use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::conv::depthwise_forward;
use crate::kernels::PadMode;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradeKind {
    /// blur → vertical stripes → noise
    ToledLike,
    /// gain → colour mix → blur → noise
    PoledLike,
}

/// Analytic stand-in for an under-display camera measurement.
///
/// Works on intensities in `[0, 1]`; stages whose parameters make them a
/// no-op are skipped, so the identity profile reproduces its input exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeProfile {
    pub kind: DegradeKind,
    pub blur_sigma: f64,
    pub stripe_period: usize,
    pub stripe_depth: f64,
    pub gain: f64,
    pub noise_sigma: f64,
    pub color_matrix: [[f64; 3]; 3],
}

const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl DegradeProfile {
    pub fn identity(kind: DegradeKind) -> Self {
        Self {
            kind,
            blur_sigma: 0.0,
            stripe_period: 0,
            stripe_depth: 0.0,
            gain: 1.0,
            noise_sigma: 0.0,
            color_matrix: IDENTITY3,
        }
    }

    pub fn toled_like() -> Self {
        Self {
            blur_sigma: 1.5,
            stripe_period: 8,
            stripe_depth: 0.25,
            noise_sigma: 0.01,
            ..Self::identity(DegradeKind::ToledLike)
        }
    }

    pub fn poled_like() -> Self {
        Self {
            blur_sigma: 1.0,
            gain: 0.35,
            noise_sigma: 0.01,
            color_matrix: [[0.9, 0.1, 0.0], [0.05, 0.8, 0.15], [0.0, 0.1, 0.7]],
            ..Self::identity(DegradeKind::PoledLike)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            return Err(Error::Config(format!("degrade gain must lie in (0, 1], got {}", self.gain)));
        }
        if !(self.blur_sigma >= 0.0 && self.noise_sigma >= 0.0) {
            return Err(Error::Config("degrade sigmas must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.stripe_depth) {
            return Err(Error::Config("stripe_depth must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Degrades a `[3, H, W]` or `[N, 3, H, W]` image in `[−1, 1]`; output clamped to `[−1, 1]`.
pub fn synth_degrade(clean: &Tensor, p: &DegradeProfile, seed: u64) -> Result<Tensor> {
    p.validate()?;
    let shape = clean.shape().to_vec();
    let x = match shape.len() {
        3 => clean.unsqueeze0(),
        4 => clean.clone(),
        _ => return Err(Error::shape("synth_degrade", format!("expected an image, got {shape:?}"))),
    };
    let (_, c, _, _) = x.dims4("synth_degrade")?;
    if c != 3 {
        return Err(Error::dim("synth_degrade", "C", 3, c));
    }
    let mut t = x.map(|v| (v + 1.0) * 0.5);
    match p.kind {
        DegradeKind::ToledLike => {
            t = blur(&t, p.blur_sigma)?;
            t = stripes(&t, p.stripe_period, p.stripe_depth)?;
        }
        DegradeKind::PoledLike => {
            if p.gain != 1.0 {
                let g = p.gain as f32;
                t = t.map(|v| v * g);
            }
            t = color_mix(&t, &p.color_matrix)?;
            t = blur(&t, p.blur_sigma)?;
        }
    }
    if p.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, p.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in t.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    let out = t.map(|v| (2.0 * v - 1.0).clamp(-1.0, 1.0));
    out.reshape(&shape)
}

/// Separable Gaussian, radius `⌈3σ⌉`, replicated borders.
pub fn blur(x: &Tensor, sigma: f64) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Ok(x.clone());
    }
    let r = (3.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    let taps: Vec<f32> = taps.iter().map(|t| (t / s) as f32).collect();
    let n = taps.len();
    let col = Tensor::new(&[1, 1, n, 1], taps.clone())?;
    let row = Tensor::new(&[1, 1, 1, n], taps)?;
    let y = depthwise_forward(x, &col, (r, 0), PadMode::Replicate)?;
    depthwise_forward(&y, &row, (0, r), PadMode::Replicate)
}

/// Multiplies column `x` by `1 − depth` on the first half of every period.
fn stripes(x: &Tensor, period: usize, depth: f64) -> Result<Tensor> {
    if period == 0 || depth == 0.0 {
        return Ok(x.clone());
    }
    let (_, _, _, w) = x.dims4("stripes")?;
    let dim = (1.0 - depth) as f32;
    Ok(Tensor::from_fn(x.shape(), |i| {
        let col = i % w;
        let v = x.data()[i];
        if col % period < period.div_ceil(2) {
            v * dim
        } else {
            v
        }
    }))
}

fn color_mix(x: &Tensor, m: &[[f64; 3]; 3]) -> Result<Tensor> {
    if *m == IDENTITY3 {
        return Ok(x.clone());
    }
    let (n, _, h, w) = x.dims4("color_mix")?;
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    for b in 0..n {
        let base = b * 3 * plane;
        for p in 0..plane {
            for (o, row) in m.iter().enumerate() {
                let mut acc = 0.0;
                for (i, coef) in row.iter().enumerate() {
                    acc += coef * f64::from(x.data()[base + i * plane + p]);
                }
                out.data_mut()[base + o * plane + p] = acc as f32;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    fn image() -> Tensor {
        Tensor::uniform(&[3, 8, 12], -1.0, 1.0, &mut StdRng::seed_from_u64(3))
    }

    #[test]
    fn identity_profiles_are_exact() {
        let x = image();
        for kind in [DegradeKind::ToledLike, DegradeKind::PoledLike] {
            let y = synth_degrade(&x, &DegradeProfile::identity(kind), 1).unwrap();
            assert!(x.max_abs_diff(&y).unwrap() < 1e-6);
        }
    }

    #[test]
    fn gain_on_constant_image() {
        // 0.5 in [0,1] → ×0.25 → 0.125 → row sums of the matrix → back to [−1,1]
        let x = Tensor::full(&[3, 4, 4], 0.0f32);
        let p = DegradeProfile {
            gain: 0.25,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            ..DegradeProfile::poled_like()
        };
        let y = synth_degrade(&x, &p, 0).unwrap();
        let sums = [1.0, 1.0, 0.8];
        for (c, s) in sums.iter().enumerate() {
            let want = 2.0 * 0.125 * s - 1.0;
            assert!((f64::from(y.data()[c * 16 + 5]) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_is_seeded_and_clamped() {
        let x = image();
        let p = DegradeProfile {
            noise_sigma: 0.5,
            ..DegradeProfile::toled_like()
        };
        let a = synth_degrade(&x, &p, 9).unwrap();
        assert_eq!(a, synth_degrade(&x, &p, 9).unwrap());
        assert_ne!(a, synth_degrade(&x, &p, 10).unwrap());
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn invalid_gain_rejected() {
        let p = DegradeProfile {
            gain: 0.0,
            ..DegradeProfile::poled_like()
        };
        assert!(synth_degrade(&image(), &p, 0).is_err());
    }
}
