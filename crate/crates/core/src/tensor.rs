//! Dense row-major tensors.
//!
//! Image-like data uses the NCHW layout (batch, channels, rows, columns).
//! Single images are either `[C, H, W]` or `[1, C, H, W]`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::real::{lit, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let dist = Uniform::new(lo, hi).expect("valid uniform range");
        Self::from_fn(shape, |_| lit(dist.sample(rng)))
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], sigma: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            lit(z * sigma)
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor with shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Extents of an NCHW tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::dim(op, "rank", 4, self.rank())),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::shape(
                op,
                format!("shape {:?} vs {:?}", self.shape, other.shape),
            ))
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64_lossy(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|x| x.as_f64()).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        let (lo, hi) = (lit::<T>(lo), lit::<T>(hi));
        self.map(|x| x.max(lo).min(hi))
    }

    /// Adds a leading batch axis of extent 1.
    pub fn unsqueeze0(&self) -> Self {
        let mut shape = Vec::with_capacity(self.rank() + 1);
        shape.push(1);
        shape.extend_from_slice(&self.shape);
        Self {
            shape,
            data: self.data.clone(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            first.expect_same_shape(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    /// Slice `index` along the leading axis.
    pub fn index0(&self, index: usize) -> Result<Self> {
        if self.rank() == 0 || index >= self.shape[0] {
            return Err(Error::shape(
                "index0",
                format!("index {index} out of range for {:?}", self.shape),
            ));
        }
        let step = self.numel() / self.shape[0];
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * step..(index + 1) * step].to_vec(),
        })
    }

    /// Applies a spatial permutation to every `H×W` plane.
    ///
    /// `map(y, x)` returns the source coordinate for output `(y, x)`; the output
    /// plane has extents `(out_h, out_w)`.
    fn remap_planes(&self, out_h: usize, out_w: usize, map: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let r = self.rank();
        assert!(r >= 2, "spatial transform needs rank >= 2");
        let (h, w) = (self.shape[r - 2], self.shape[r - 1]);
        let planes = self.numel() / (h * w).max(1);
        let mut data = Vec::with_capacity(self.numel());
        for p in 0..planes {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            for y in 0..out_h {
                for x in 0..out_w {
                    let (sy, sx) = map(y, x);
                    data.push(src[sy * w + sx]);
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[r - 2] = out_h;
        shape[r - 1] = out_w;
        Self { shape, data }
    }

    fn hw(&self) -> (usize, usize) {
        let r = self.rank();
        (self.shape[r - 2], self.shape[r - 1])
    }

    /// Mirrors columns (left-right).
    pub fn flip_h(&self) -> Self {
        let (h, w) = self.hw();
        self.remap_planes(h, w, |y, x| (y, w - 1 - x))
    }

    /// Mirrors rows (top-bottom).
    pub fn flip_v(&self) -> Self {
        let (h, w) = self.hw();
        self.remap_planes(h, w, |y, x| (h - 1 - y, x))
    }

    pub fn rot180(&self) -> Self {
        let (h, w) = self.hw();
        self.remap_planes(h, w, |y, x| (h - 1 - y, w - 1 - x))
    }

    /// Swaps the two spatial axes.
    pub fn transpose_hw(&self) -> Self {
        let (h, w) = self.hw();
        self.remap_planes(w, h, |y, x| (x, y))
    }
}

impl<T: Real> Default for Tensor<T> {
    fn default() -> Self {
        Self {
            shape: vec![0],
            data: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn rot180_is_both_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tensor::<f32>::uniform(&[3, 5, 7], -1.0, 1.0, &mut rng);
        assert_eq!(t.rot180(), t.flip_h().flip_v());
        assert_eq!(t.rot180(), t.flip_v().flip_h());
    }

    #[test]
    fn transpose_swaps_extents() {
        let t = Tensor::<f32>::from_fn(&[1, 1, 2, 3], |i| i as f32);
        let tt = t.transpose_hw();
        assert_eq!(tt.shape(), &[1, 1, 3, 2]);
        assert_eq!(tt.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(tt.transpose_hw(), t);
    }

    #[test]
    fn stack_and_index_round_trip() {
        let a = Tensor::<f32>::from_fn(&[2, 2], |i| i as f32);
        let b = a.map(|x| x + 10.0);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.index0(1).unwrap(), b);
    }
}
