//! Bilinear resampling with the half-pixel (align-corners-false) convention.
//!
//! Output sample `i` reads input coordinate `(i + 0.5)·in/out − 0.5`, clamped
//! to the valid range.

use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// Interpolation taps along one axis: `(lo, hi, frac)`.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if lo == hi { 0.0 } else { src - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

fn check(x: &[usize], out_h: usize, out_w: usize) -> Result<(usize, usize, usize, usize)> {
    const OP: &str = "bilinear_resize";
    let [n, c, h, w] = x[..] else {
        return Err(Error::dim(OP, "rank", 4, x.len()));
    };
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::shape(OP, "extents must be >= 1"));
    }
    Ok((n, c, h, w))
}

pub fn bilinear_resize<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = check(x.shape(), out_h, out_w)?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rows = axis_taps(h, out_h);
    let cols = axis_taps(w, out_w);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for p in 0..n * c {
        let plane = &xd[p * h * w..(p + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                // lerp in the `a + t·(b − a)` form keeps constants exact
                let top = plane[y0 * w + x0].as_f64();
                let top = top + fx * (plane[y0 * w + x1].as_f64() - top);
                let bot = plane[y1 * w + x0].as_f64();
                let bot = bot + fx * (plane[y1 * w + x1].as_f64() - bot);
                out.push(lit(top + fy * (bot - top)));
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

pub fn bilinear_resize_backward<T: Real>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (out_h, out_w) = (grad_out.shape()[2], grad_out.shape()[3]);
    let (n, c, h, w) = check(input_shape, out_h, out_w)?;
    if (h, w) == (out_h, out_w) {
        return Ok(grad_out.clone());
    }
    let rows = axis_taps(h, out_h);
    let cols = axis_taps(w, out_w);
    let gd = grad_out.data();
    let mut dx = vec![0.0f64; n * c * h * w];
    for p in 0..n * c {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        let g = &gd[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let v = g[oy * out_w + ox].as_f64();
                plane[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += v * (1.0 - fy) * fx;
                plane[y1 * w + x0] += v * fy * (1.0 - fx);
                plane[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    Tensor::new(input_shape, dx.into_iter().map(lit).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_to_four_half_pixel() {
        let x = Tensor::<f64>::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = bilinear_resize(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f32>::full(&[2, 3, 5, 7], 0.3);
        let y = bilinear_resize(&x, 13, 4).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn zero_extent_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(bilinear_resize(&x, 0, 3).is_err());
    }
}
