//! 2-D convolution kernels.
//!
//! [`conv2d_direct`] is the reference: plain nested loops with 64-bit
//! accumulation. [`conv2d_forward`] / [`conv2d_backward`] lower to im2col and a
//! double-precision GEMM and are what the autograd graph uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::Tensor;

/// How samples outside the input are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    #[default]
    Zeros,
    /// Clamp to the nearest edge sample.
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub pad_mode: PadMode,
}

impl Conv2dSpec {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation,
            padding,
            pad_mode: PadMode::Zeros,
        }
    }

    /// Stride 1 with the padding that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation, dilation * (kernel - 1) / 2)
    }

    pub fn with_pad_mode(mut self, pad_mode: PadMode) -> Self {
        self.pad_mode = pad_mode;
        self
    }

    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < span {
            None
        } else {
            Some((padded - span) / self.stride + 1)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) fn conv_dims(
    x: &[usize],
    kernel: &[usize],
    bias: Option<&[usize]>,
    pre_bias: Option<&[usize]>,
    spec: &Conv2dSpec,
) -> Result<ConvDims> {
    const OP: &str = "conv2d";
    let [n, c, h, w] = x[..] else {
        return Err(Error::dim(OP, "input rank", 4, x.len()));
    };
    let [o, i, kh, kw] = kernel[..] else {
        return Err(Error::dim(OP, "kernel rank", 4, kernel.len()));
    };
    if i != c {
        return Err(Error::dim(OP, "C", i, c));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(
            OP,
            format!("kernel spatial extent must be square and odd, got {kh}x{kw}"),
        ));
    }
    if spec.stride == 0 || spec.dilation == 0 {
        return Err(Error::shape(OP, "stride and dilation must be >= 1"));
    }
    for (name, b) in [("bias", bias), ("pre_bias", pre_bias)] {
        if let Some(b) = b {
            let len: usize = b.iter().product();
            if len != o {
                return Err(Error::dim(
                    OP,
                    if name == "bias" { "bias O" } else { "pre_bias O" },
                    o,
                    len,
                ));
            }
        }
    }
    let ho = spec
        .out_extent(h, kh)
        .ok_or_else(|| Error::shape(OP, format!("H={h} too small for the dilated kernel")))?;
    let wo = spec
        .out_extent(w, kw)
        .ok_or_else(|| Error::shape(OP, format!("W={w} too small for the dilated kernel")))?;
    Ok(ConvDims {
        n,
        c,
        h,
        w,
        o,
        k: kh,
        ho,
        wo,
    })
}

/// Source index for every (output position, tap) along one axis.
fn tap_table(out_len: usize, k: usize, extent: usize, spec: &Conv2dSpec) -> Vec<Option<usize>> {
    let mut table = Vec::with_capacity(out_len * k);
    for o in 0..out_len {
        for t in 0..k {
            let pos = (o * spec.stride + t * spec.dilation) as isize - spec.padding as isize;
            let idx = if pos >= 0 && (pos as usize) < extent {
                Some(pos as usize)
            } else {
                match spec.pad_mode {
                    PadMode::Zeros => None,
                    PadMode::Replicate => Some(pos.clamp(0, extent as isize - 1) as usize),
                }
            };
            table.push(idx);
        }
    }
    table
}

/// Reference convolution: direct loops, 64-bit accumulation.
///
/// `pre_bias[o]` is added to every input sample before padding, so it is seen
/// by the kernel of output channel `o` wherever a tap reads a real sample.
pub fn conv2d_direct<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    pre_bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<Tensor<T>> {
    let d = conv_dims(
        x.shape(),
        kernel.shape(),
        bias.map(|b| b.shape()),
        pre_bias.map(|b| b.shape()),
        spec,
    )?;
    let rows = tap_table(d.ho, d.k, d.h, spec);
    let cols = tap_table(d.wo, d.k, d.w, spec);
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = Vec::with_capacity(d.n * d.o * d.ho * d.wo);
    for n in 0..d.n {
        for o in 0..d.o {
            let b = bias.map_or(0.0, |b| b.data()[o].as_f64());
            let pb = pre_bias.map_or(0.0, |b| b.data()[o].as_f64());
            for oy in 0..d.ho {
                for ox in 0..d.wo {
                    let mut acc = 0.0f64;
                    for c in 0..d.c {
                        for ky in 0..d.k {
                            let Some(iy) = rows[oy * d.k + ky] else { continue };
                            for kx in 0..d.k {
                                let Some(ix) = cols[ox * d.k + kx] else { continue };
                                let xv = xd[((n * d.c + c) * d.h + iy) * d.w + ix].as_f64();
                                let kv = kd[((o * d.c + c) * d.k + ky) * d.k + kx].as_f64();
                                acc += (xv + pb) * kv;
                            }
                        }
                    }
                    out.push(lit(acc + b));
                }
            }
        }
    }
    Tensor::new(&[d.n, d.o, d.ho, d.wo], out)
}

/// `c = a·b + beta·c` on strided f64 matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Copies a plane into `out` with `(ph, pw)` samples of padding on each side.
fn pad_plane<T: Real>(plane: &[T], h: usize, w: usize, (ph, pw): (usize, usize), mode: PadMode, out: &mut Vec<f64>) {
    let wp = w + 2 * pw;
    out.clear();
    out.resize((h + 2 * ph) * wp, 0.0);
    for py in 0..h + 2 * ph {
        let y = match mode {
            PadMode::Zeros if py < ph || py >= h + ph => continue,
            _ => py.saturating_sub(ph).min(h - 1),
        };
        let src = &plane[y * w..(y + 1) * w];
        let dst = &mut out[py * wp..(py + 1) * wp];
        for (d, v) in dst[pw..pw + w].iter_mut().zip(src) {
            *d = v.as_f64();
        }
        if mode == PadMode::Replicate {
            let (first, last) = (src[0].as_f64(), src[w - 1].as_f64());
            dst[..pw].iter_mut().for_each(|d| *d = first);
            dst[pw + w..].iter_mut().for_each(|d| *d = last);
        }
    }
}

/// Adjoint of [`pad_plane`]: adds a padded gradient into `out`.
fn fold_plane(padded: &[f64], h: usize, w: usize, (ph, pw): (usize, usize), mode: PadMode, out: &mut [f64]) {
    let wp = w + 2 * pw;
    for py in 0..h + 2 * ph {
        let y = match mode {
            PadMode::Zeros if py < ph || py >= h + ph => continue,
            _ => py.saturating_sub(ph).min(h - 1),
        };
        let src = &padded[py * wp..(py + 1) * wp];
        let dst = &mut out[y * w..(y + 1) * w];
        for (d, v) in dst.iter_mut().zip(&src[pw..pw + w]) {
            *d += v;
        }
        if mode == PadMode::Replicate {
            dst[0] += src[..pw].iter().sum::<f64>();
            dst[w - 1] += src[pw + w..].iter().sum::<f64>();
        }
    }
}

struct Lowering {
    d: ConvDims,
    spec: Conv2dSpec,
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

impl Lowering {
    fn new(d: ConvDims, spec: &Conv2dSpec) -> Self {
        Self {
            rows: tap_table(d.ho, d.k, d.h, spec),
            cols: tap_table(d.wo, d.k, d.w, spec),
            spec: *spec,
            d,
        }
    }

    fn patch(&self) -> usize {
        self.d.ho * self.d.wo
    }

    /// `[C·K·K, Ho·Wo]` column matrix of sample `n`.
    fn im2col<T: Real>(&self, x: &[T], n: usize, col: &mut [f64]) {
        let d = &self.d;
        let p = self.patch();
        let (pad, s, dil) = (self.spec.padding, self.spec.stride, self.spec.dilation);
        let wp = d.w + 2 * pad;
        let mut padded = Vec::new();
        for c in 0..d.c {
            let plane = &x[(n * d.c + c) * d.h * d.w..(n * d.c + c + 1) * d.h * d.w];
            pad_plane(plane, d.h, d.w, (pad, pad), self.spec.pad_mode, &mut padded);
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let row = &mut col[((c * d.k + ky) * d.k + kx) * p..][..p];
                    for oy in 0..d.ho {
                        let src = &padded[(oy * s + ky * dil) * wp + kx * dil..];
                        let dst = &mut row[oy * d.wo..(oy + 1) * d.wo];
                        if s == 1 {
                            dst.copy_from_slice(&src[..d.wo]);
                        } else {
                            for (ox, v) in dst.iter_mut().enumerate() {
                                *v = src[ox * s];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let d = &self.d;
        let p = self.patch();
        let (pad, s, dil) = (self.spec.padding, self.spec.stride, self.spec.dilation);
        let (hp, wp) = (d.h + 2 * pad, d.w + 2 * pad);
        let mut padded = vec![0.0; hp * wp];
        for c in 0..d.c {
            padded.iter_mut().for_each(|v| *v = 0.0);
            for ky in 0..d.k {
                for kx in 0..d.k {
                    let row = &col[((c * d.k + ky) * d.k + kx) * p..][..p];
                    for oy in 0..d.ho {
                        let dst = &mut padded[(oy * s + ky * dil) * wp + kx * dil..];
                        let src = &row[oy * d.wo..(oy + 1) * d.wo];
                        for (ox, v) in src.iter().enumerate() {
                            dst[ox * s] += v;
                        }
                    }
                }
            }
            let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
            fold_plane(&padded, d.h, d.w, (pad, pad), self.spec.pad_mode, plane);
        }
    }

    /// `[K·K, Ho·Wo]` indicator of taps that read a real sample.
    fn tap_mask(&self) -> Vec<f64> {
        let d = &self.d;
        let p = self.patch();
        let mut mask = vec![0.0; d.k * d.k * p];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = &mut mask[(ky * d.k + kx) * p..][..p];
                for oy in 0..d.ho {
                    for ox in 0..d.wo {
                        if self.rows[oy * d.k + ky].is_some() && self.cols[ox * d.k + kx].is_some() {
                            row[oy * d.wo + ox] = 1.0;
                        }
                    }
                }
            }
        }
        mask
    }

    /// Kernel summed over input channels, `[O, K·K]`.
    fn kernel_channel_sum(&self, w: &[f64]) -> Vec<f64> {
        let d = &self.d;
        let kk = d.k * d.k;
        let mut sum = vec![0.0; d.o * kk];
        for o in 0..d.o {
            for c in 0..d.c {
                for t in 0..kk {
                    sum[o * kk + t] += w[(o * d.c + c) * kk + t];
                }
            }
        }
        sum
    }
}

fn to_f64<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

/// GEMM-lowered convolution; agrees with [`conv2d_direct`] to rounding.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    pre_bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<Tensor<T>> {
    let d = conv_dims(
        x.shape(),
        kernel.shape(),
        bias.map(|b| b.shape()),
        pre_bias.map(|b| b.shape()),
        spec,
    )?;
    let low = Lowering::new(d, spec);
    let (p, ckk) = (low.patch(), d.c * d.k * d.k);
    let wf = to_f64(kernel);

    // Per-output-channel offset map contributed by the pre-bias.
    let pre_term = pre_bias.map(|pb| {
        let kk = d.k * d.k;
        let wsum = low.kernel_channel_sum(&wf);
        let mask = low.tap_mask();
        let mut term = vec![0.0; d.o * p];
        gemm(d.o, kk, p, &wsum, (kk, 1), &mask, (p, 1), 0.0, &mut term, (p, 1));
        for (o, row) in term.chunks_mut(p).enumerate() {
            let s = pb.data()[o].as_f64();
            row.iter_mut().for_each(|v| *v *= s);
        }
        term
    });

    let mut col = vec![0.0; ckk * p];
    let mut acc = vec![0.0; d.o * p];
    let mut out = Vec::with_capacity(d.n * d.o * p);
    for n in 0..d.n {
        low.im2col(x.data(), n, &mut col);
        gemm(d.o, ckk, p, &wf, (ckk, 1), &col, (p, 1), 0.0, &mut acc, (p, 1));
        for o in 0..d.o {
            let b = bias.map_or(0.0, |b| b.data()[o].as_f64());
            let row = &acc[o * p..(o + 1) * p];
            match &pre_term {
                Some(term) => {
                    let trow = &term[o * p..(o + 1) * p];
                    out.extend(row.iter().zip(trow).map(|(&v, &t)| lit::<T>(v + t + b)));
                }
                None => out.extend(row.iter().map(|&v| lit::<T>(v + b))),
            }
        }
    }
    Tensor::new(&[d.n, d.o, d.ho, d.wo], out)
}

/// Gradients of [`conv2d_forward`] with respect to each operand.
pub struct Conv2dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
    pub pre_bias: Option<Tensor<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    pre_bias: Option<&Tensor<T>>,
    has_bias: bool,
    grad_out: &Tensor<T>,
    spec: &Conv2dSpec,
    need_input: bool,
    need_kernel: bool,
) -> Result<Conv2dGrads<T>> {
    let d = conv_dims(
        x.shape(),
        kernel.shape(),
        None,
        pre_bias.map(|b| b.shape()),
        spec,
    )?;
    if grad_out.shape() != [d.n, d.o, d.ho, d.wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("gradient shape {:?}", grad_out.shape()),
        ));
    }
    let low = Lowering::new(d, spec);
    let (p, kk) = (low.patch(), d.k * d.k);
    let ckk = d.c * kk;
    let wf = to_f64(kernel);
    let gd = grad_out.data();
    let mask = pre_bias.map(|_| low.tap_mask());

    let mut dw = vec![0.0; d.o * ckk];
    let mut db = vec![0.0; d.o];
    let mut gmask = vec![0.0; d.o * kk];
    let mut dx = if need_input {
        Vec::with_capacity(x.numel())
    } else {
        Vec::new()
    };
    let need_kernel = need_kernel || pre_bias.is_some();
    let mut col = vec![0.0; ckk * p];
    let mut dcol = vec![0.0; if need_input { ckk * p } else { 0 }];
    let mut dx_n = vec![0.0; d.c * d.h * d.w];
    let mut g = vec![0.0; d.o * p];

    for n in 0..d.n {
        for (dst, src) in g.iter_mut().zip(&gd[n * d.o * p..(n + 1) * d.o * p]) {
            *dst = src.as_f64();
        }
        for o in 0..d.o {
            db[o] += g[o * p..(o + 1) * p].iter().sum::<f64>();
        }
        if need_kernel {
            low.im2col(x.data(), n, &mut col);
            // dW += G · colᵀ
            gemm(d.o, p, ckk, &g, (p, 1), &col, (1, p), 1.0, &mut dw, (ckk, 1));
        }
        if let Some(mask) = &mask {
            gemm(d.o, p, kk, &g, (p, 1), mask, (1, p), 1.0, &mut gmask, (kk, 1));
        }
        if need_input {
            // dcol = Wᵀ · G
            gemm(ckk, d.o, p, &wf, (1, ckk), &g, (p, 1), 0.0, &mut dcol, (p, 1));
            dx_n.iter_mut().for_each(|v| *v = 0.0);
            low.col2im(&dcol, &mut dx_n);
            dx.extend(dx_n.iter().map(|&v| lit::<T>(v)));
        }
    }

    let mut dpb = None;
    if let Some(pb) = pre_bias {
        let wsum = low.kernel_channel_sum(&wf);
        let mut grad = Vec::with_capacity(d.o);
        for o in 0..d.o {
            let s = pb.data()[o].as_f64();
            for c in 0..d.c {
                for t in 0..kk {
                    dw[(o * d.c + c) * kk + t] += s * gmask[o * kk + t];
                }
            }
            let row = o * kk..(o + 1) * kk;
            grad.push(lit::<T>(
                wsum[row.clone()]
                    .iter()
                    .zip(&gmask[row])
                    .map(|(a, b)| a * b)
                    .sum::<f64>(),
            ));
        }
        dpb = Some(Tensor::new(pb.shape(), grad)?);
    }

    Ok(Conv2dGrads {
        input: if need_input {
            Some(Tensor::new(x.shape(), dx)?)
        } else {
            None
        },
        kernel: if need_kernel {
            Some(Tensor::new(
                kernel.shape(),
                dw.into_iter().map(lit::<T>).collect(),
            )?)
        } else {
            None
        },
        bias: if has_bias {
            Some(Tensor::new(&[d.o], db.into_iter().map(lit::<T>).collect())?)
        } else {
            None
        },
        pre_bias: dpb,
    })
}

/// Depthwise convolution with stride 1: channel `c` of the input is filtered
/// by `kernel[c]`, or by `kernel[0]` for every channel when the kernel has a
/// single channel (a shared kernel).
///
/// Kernel shape is `[C or 1, 1, kh, kw]`.
pub fn depthwise_forward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    pad: (usize, usize),
    mode: PadMode,
) -> Result<Tensor<T>> {
    let g = DepthwiseGeom::new(x.shape(), kernel.shape(), pad)?;
    let (xd, kd) = (x.data(), kernel.data());
    let wp = g.w + 2 * pad.1;
    let mut out = Vec::with_capacity(g.n * g.c * g.ho * g.wo);
    let mut padded = Vec::new();
    let mut acc = vec![0.0f64; g.wo];
    for n in 0..g.n {
        for c in 0..g.c {
            let plane = &xd[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
            pad_plane(plane, g.h, g.w, pad, mode, &mut padded);
            let kc = if g.shared { 0 } else { c };
            let ker: Vec<f64> = kd[kc * g.kh * g.kw..][..g.kh * g.kw].iter().map(|v| v.as_f64()).collect();
            for oy in 0..g.ho {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for ky in 0..g.kh {
                    let row = &padded[(oy + ky) * wp..(oy + ky + 1) * wp];
                    for kx in 0..g.kw {
                        let k = ker[ky * g.kw + kx];
                        for (a, v) in acc.iter_mut().zip(&row[kx..kx + g.wo]) {
                            *a += v * k;
                        }
                    }
                }
                out.extend(acc.iter().map(|&v| lit::<T>(v)));
            }
        }
    }
    Tensor::new(&[g.n, g.c, g.ho, g.wo], out)
}

pub fn depthwise_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    pad: (usize, usize),
    mode: PadMode,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = DepthwiseGeom::new(x.shape(), kernel.shape(), pad)?;
    if grad_out.shape() != [g.n, g.c, g.ho, g.wo] {
        return Err(Error::shape(
            "depthwise_backward",
            format!("gradient shape {:?}", grad_out.shape()),
        ));
    }
    let (xd, kd, gd) = (x.data(), kernel.data(), grad_out.data());
    let (hp, wp) = (g.h + 2 * pad.0, g.w + 2 * pad.1);
    let mut dx = vec![0.0f64; x.numel()];
    let mut dk = vec![0.0f64; kernel.numel()];
    let mut padded = Vec::new();
    let mut dpad = vec![0.0f64; hp * wp];
    let mut grow = vec![0.0f64; g.wo];
    for n in 0..g.n {
        for c in 0..g.c {
            let base = (n * g.c + c) * g.h * g.w;
            pad_plane(&xd[base..base + g.h * g.w], g.h, g.w, pad, mode, &mut padded);
            dpad.iter_mut().for_each(|v| *v = 0.0);
            let kc = if g.shared { 0 } else { c };
            let kbase = kc * g.kh * g.kw;
            let gplane = &gd[(n * g.c + c) * g.ho * g.wo..][..g.ho * g.wo];
            for oy in 0..g.ho {
                for (d, v) in grow.iter_mut().zip(&gplane[oy * g.wo..(oy + 1) * g.wo]) {
                    *d = v.as_f64();
                }
                for ky in 0..g.kh {
                    let r = (oy + ky) * wp;
                    for kx in 0..g.kw {
                        let k = kd[kbase + ky * g.kw + kx].as_f64();
                        let xs = &padded[r + kx..r + kx + g.wo];
                        dk[kbase + ky * g.kw + kx] += grow.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                        for (d, go) in dpad[r + kx..r + kx + g.wo].iter_mut().zip(&grow) {
                            *d += go * k;
                        }
                    }
                }
            }
            fold_plane(&dpad, g.h, g.w, pad, mode, &mut dx[base..base + g.h * g.w]);
        }
    }
    Ok((
        Tensor::new(x.shape(), dx.into_iter().map(lit).collect())?,
        Tensor::new(kernel.shape(), dk.into_iter().map(lit).collect())?,
    ))
}

struct DepthwiseGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    shared: bool,
}

impl DepthwiseGeom {
    fn new(x: &[usize], kernel: &[usize], (ph, pw): (usize, usize)) -> Result<Self> {
        const OP: &str = "depthwise_conv2d";
        let [n, c, h, w] = x[..] else {
            return Err(Error::dim(OP, "input rank", 4, x.len()));
        };
        let [kc, one, kh, kw] = kernel[..] else {
            return Err(Error::dim(OP, "kernel rank", 4, kernel.len()));
        };
        if one != 1 {
            return Err(Error::dim(OP, "kernel I", 1, one));
        }
        if kc != 1 && kc != c {
            return Err(Error::dim(OP, "C", c, kc));
        }
        if h + 2 * ph < kh || w + 2 * pw < kw || kh == 0 || kw == 0 {
            return Err(Error::shape(OP, "input smaller than kernel"));
        }
        let (ho, wo) = (h + 2 * ph - kh + 1, w + 2 * pw - kw + 1);
        Ok(Self {
            n,
            c,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            shared: kc == 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_extent_formula() {
        let spec = Conv2dSpec::new(2, 3, 1);
        // (10 + 2 - 3*2 - 1)/2 + 1
        assert_eq!(spec.out_extent(10, 3), Some(3));
        assert_eq!(Conv2dSpec::new(1, 4, 0).out_extent(5, 3), None);
    }

    #[test]
    fn gemm_path_matches_direct_with_prebias_and_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (spec, k) in [
            (Conv2dSpec::new(1, 1, 1), 3),
            (Conv2dSpec::new(2, 1, 2), 5),
            (Conv2dSpec::new(1, 3, 3).with_pad_mode(PadMode::Replicate), 3),
            (Conv2dSpec::new(1, 2, 0), 3),
        ] {
            let x = Tensor::<f64>::uniform(&[2, 3, 9, 8], -1.0, 1.0, &mut rng);
            let w = Tensor::<f64>::uniform(&[4, 3, k, k], -1.0, 1.0, &mut rng);
            let b = Tensor::<f64>::uniform(&[4], -1.0, 1.0, &mut rng);
            let pb = Tensor::<f64>::uniform(&[4], -1.0, 1.0, &mut rng);
            let a = conv2d_direct(&x, &w, Some(&b), Some(&pb), &spec).unwrap();
            let g = conv2d_forward(&x, &w, Some(&b), Some(&pb), &spec).unwrap();
            assert!(a.max_abs_diff(&g).unwrap() < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&x, &w, None, None, &Conv2dSpec::same(3, 1)).unwrap_err();
        assert!(matches!(err, Error::Dim { axis: "C", expected: 3, found: 2, .. }));
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(conv2d_forward(&x, &w, None, None, &Conv2dSpec::new(1, 1, 0)).is_err());
    }

    #[test]
    fn shared_depthwise_applies_one_kernel_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(&[1, 3, 6, 6], -1.0, 1.0, &mut rng);
        let k = Tensor::<f64>::uniform(&[1, 1, 3, 1], -1.0, 1.0, &mut rng);
        let k3 = Tensor::new(&[3, 1, 3, 1], [k.data(), k.data(), k.data()].concat()).unwrap();
        let a = depthwise_forward(&x, &k, (1, 0), PadMode::Replicate).unwrap();
        let b = depthwise_forward(&x, &k3, (1, 0), PadMode::Replicate).unwrap();
        assert_eq!(a, b);
    }
}
