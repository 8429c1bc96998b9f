//! Per-(sample, channel) reductions: instance normalization and global average pooling.

use crate::error::Result;
use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// Statistics saved by [`instance_norm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct InstanceStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// `(x − mean) / sqrt(var + eps)` per sample and channel, population variance.
pub fn instance_norm<T: Real>(x: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, InstanceStats)> {
    let (n, c, h, w) = x.dims4("instance_norm")?;
    let m = h * w;
    let mut mean = Vec::with_capacity(n * c);
    let mut inv_std = Vec::with_capacity(n * c);
    let mut out = Vec::with_capacity(x.numel());
    for plane in x.data().chunks(m.max(1)).take(n * c) {
        let mu = plane.iter().map(|v| v.as_f64()).sum::<f64>() / m as f64;
        let var = plane
            .iter()
            .map(|v| {
                let d = v.as_f64() - mu;
                d * d
            })
            .sum::<f64>()
            / m as f64;
        let r = 1.0 / (var + eps).sqrt();
        out.extend(plane.iter().map(|v| lit::<T>((v.as_f64() - mu) * r)));
        mean.push(mu);
        inv_std.push(r);
    }
    Ok((Tensor::new(x.shape(), out)?, InstanceStats { mean, inv_std }))
}

pub fn instance_norm_backward<T: Real>(
    x: &Tensor<T>,
    stats: &InstanceStats,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4("instance_norm")?;
    let m = (h * w) as f64;
    let mut dx = Vec::with_capacity(x.numel());
    for (p, (xs, gs)) in x
        .data()
        .chunks(h * w)
        .zip(grad_out.data().chunks(h * w))
        .enumerate()
    {
        let (mu, r) = (stats.mean[p], stats.inv_std[p]);
        let xhat = |v: T| (v.as_f64() - mu) * r;
        let sum_g: f64 = gs.iter().map(|g| g.as_f64()).sum();
        let sum_gx: f64 = xs.iter().zip(gs).map(|(&v, g)| g.as_f64() * xhat(v)).sum();
        dx.extend(
            xs.iter()
                .zip(gs)
                .map(|(&v, g)| lit::<T>(r / m * (m * g.as_f64() - sum_g - xhat(v) * sum_gx))),
        );
    }
    Tensor::new(x.shape(), dx)
}

/// Mean over the spatial axes: `[N, C, H, W]` → `[N, C, 1, 1]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("global_avg_pool")?;
    let m = h * w;
    let out = x
        .data()
        .chunks(m.max(1))
        .take(n * c)
        .map(|plane| lit::<T>(plane.iter().map(|v| v.as_f64()).sum::<f64>() / m as f64))
        .collect();
    Tensor::new(&[n, c, 1, 1], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_per_channel() {
        let x = Tensor::<f32>::new(&[1, 2, 2, 2], vec![1., 2., 3., 4., 0., 0., 0., 0.]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5, 0.0]);
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 0.7);
        let (y, _) = instance_norm(&x, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
