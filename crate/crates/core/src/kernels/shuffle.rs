//! Space-to-depth (`pixel_unshuffle`) and depth-to-space (`pixel_shuffle`).
//!
//! Channel `c·s² + i·s + j` of the unshuffled tensor holds the samples at
//! row offset `i` and column offset `j` of input channel `c`.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    const OP: &str = "pixel_unshuffle";
    let (n, c, h, w) = x.dims4(OP)?;
    if s == 0 {
        return Err(Error::shape(OP, "factor must be >= 1"));
    }
    if h % s != 0 {
        return Err(Error::dim(OP, "H", h.next_multiple_of(s), h));
    }
    if w % s != 0 {
        return Err(Error::dim(OP, "W", w.next_multiple_of(s), w));
    }
    let (ho, wo) = (h / s, w / s);
    let xd = x.data();
    let mut out = Vec::with_capacity(x.numel());
    for b in 0..n {
        for ci in 0..c {
            for i in 0..s {
                for j in 0..s {
                    for y in 0..ho {
                        let row = ((b * c + ci) * h + y * s + i) * w;
                        out.extend((0..wo).map(|xo| xd[row + xo * s + j]));
                    }
                }
            }
        }
    }
    Tensor::new(&[n, c * s * s, ho, wo], out)
}

pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    const OP: &str = "pixel_shuffle";
    let (n, cs, h, w) = x.dims4(OP)?;
    if s == 0 {
        return Err(Error::shape(OP, "factor must be >= 1"));
    }
    if cs % (s * s) != 0 {
        return Err(Error::dim(OP, "C", cs.next_multiple_of(s * s), cs));
    }
    let c = cs / (s * s);
    let (ho, wo) = (h * s, w * s);
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    for b in 0..n {
        for ci in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let src = (b * cs + ci * s * s + i * s + j) * h * w;
                    for y in 0..h {
                        let dst = ((b * c + ci) * ho + y * s + i) * wo;
                        for xo in 0..w {
                            out[dst + xo * s + j] = xd[src + y * w + xo];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unshuffle_gathers_even_positions_into_channel_zero() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 4, 4], |i| i as f32);
        let u = pixel_unshuffle(&x, 2).unwrap();
        assert_eq!(u.shape(), &[1, 4, 2, 2]);
        assert_eq!(&u.data()[..4], &[0.0, 2.0, 8.0, 10.0]);
        assert_eq!(&u.data()[4..8], &[1.0, 3.0, 9.0, 11.0]);
    }

    #[test]
    fn factor_three_shape() {
        let x = Tensor::<f32>::zeros(&[1, 3, 6, 6]);
        assert_eq!(pixel_unshuffle(&x, 3).unwrap().shape(), &[1, 27, 2, 2]);
    }

    #[test]
    fn indivisible_extents_error() {
        let x = Tensor::<f32>::zeros(&[1, 3, 5, 6]);
        assert!(matches!(
            pixel_unshuffle(&x, 2),
            Err(Error::Dim { axis: "H", .. })
        ));
        let y = Tensor::<f32>::zeros(&[1, 6, 2, 2]);
        assert!(matches!(pixel_shuffle(&y, 2), Err(Error::Dim { axis: "C", .. })));
    }
}
