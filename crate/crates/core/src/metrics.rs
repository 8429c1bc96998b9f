//! Image quality metrics on `[N, C, H, W]` tensors.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in dB over all elements; `+∞` for identical inputs.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    a.expect_same_shape(b, "psnr")?;
    if a.numel() == 0 {
        return Err(Error::shape("psnr", "empty tensors"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Structural similarity of the channel-mean luminance, averaged over the batch.
///
/// Uses a Gaussian window over valid positions only. Images smaller than the
/// window are compared with a single window of global statistics.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>, cfg: &SsimConfig) -> Result<f64> {
    a.expect_same_shape(b, "ssim")?;
    let (n, c, h, w) = a.dims4("ssim")?;
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::shape("ssim", "empty tensors"));
    }
    let gray = |t: &Tensor<T>, img: usize| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for ch in 0..c {
            let base = (img * c + ch) * h * w;
            for (o, v) in out.iter_mut().zip(&t.data()[base..base + h * w]) {
                *o += v.as_f64();
            }
        }
        out.iter_mut().for_each(|v| *v /= c as f64);
        out
    };
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let index = |mx: f64, my: f64, vx: f64, vy: f64, cxy: f64| {
        ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    };
    let mut total = 0.0;
    for img in 0..n {
        let (x, y) = (gray(a, img), gray(b, img));
        total += if h < cfg.window || w < cfg.window {
            let m = (h * w) as f64;
            let mx = x.iter().sum::<f64>() / m;
            let my = y.iter().sum::<f64>() / m;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for (p, q) in x.iter().zip(&y) {
                vx += (p - mx) * (p - mx);
                vy += (q - my) * (q - my);
                cxy += (p - mx) * (q - my);
            }
            index(mx, my, vx / m, vy / m, cxy / m)
        } else {
            let k = gaussian(cfg.window, cfg.sigma);
            let (oh, ow) = (h - cfg.window + 1, w - cfg.window + 1);
            let mut sum = 0.0;
            for oy in 0..oh {
                for ox in 0..ow {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (dy, ky) in k.iter().enumerate() {
                        let row = (oy + dy) * w + ox;
                        for (dx, kx) in k.iter().enumerate() {
                            let wt = ky * kx;
                            let (p, q) = (x[row + dx], y[row + dx]);
                            mx += wt * p;
                            my += wt * q;
                            sxx += wt * p * p;
                            syy += wt * q * q;
                            sxy += wt * p * q;
                        }
                    }
                    sum += index(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my);
                }
            }
            sum / (oh * ow) as f64
        };
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_known_value() {
        let a = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f64>::full(&[1, 1, 2, 2], 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_identity_and_degradation() {
        let a = Tensor::<f64>::from_fn(&[1, 3, 16, 16], |i| ((i * 37) % 17) as f64 / 17.0);
        let s = ssim(&a, &a, &SsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let b = a.map(|v| v * 0.5 + 0.2);
        assert!(ssim(&a, &b, &SsimConfig::default()).unwrap() < 0.99);
    }

    #[test]
    fn ssim_small_image_fallback() {
        let a = Tensor::<f64>::from_fn(&[2, 1, 4, 4], |i| i as f64 / 32.0);
        let s = ssim(&a, &a, &SsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
