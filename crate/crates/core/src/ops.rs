//! Neural-network forward kernels: 2-D (grouped) convolution, per-channel 1-D
//! convolution along a spatial axis, pooling, activations, softmax, group
//! normalization, inference-mode batch normalization, nearest upsampling and
//! batched matmul.
//!
//! Convolution follows cross-correlation semantics (no kernel flip), the
//! universal detection-framework convention.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GROUP_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct Conv2dParams<T> {
    /// (Cout, Cin/groups, kh, kw)
    pub weight: Tensor<T>,
    /// (Cout)
    pub bias: Option<Tensor<T>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl<T: Scalar> Conv2dParams<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Self {
        Conv2dParams { weight, bias, stride: (1, 1), padding: (0, 0), groups: 1 }
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn with_padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn with_groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.groups
    }

    fn validate(&self) -> Result<()> {
        if self.weight.rank() != 4 {
            return Err(Error::invalid("conv weight must be rank 4 (Cout, Cin/g, kh, kw)"));
        }
        let cout = self.weight.shape()[0];
        if cout % self.groups != 0 {
            return Err(Error::Divisibility { what: "Cout", value: cout, by: self.groups });
        }
        if let Some(b) = &self.bias {
            if b.len() != cout {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: b.shape().to_vec(),
                    rhs: vec![cout],
                });
            }
        }
        Ok(())
    }
}

/// Spatial axis a 1-D kernel slides along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis1d {
    H,
    W,
}

#[derive(Clone, Debug)]
pub struct DwConv1dParams<T> {
    /// (C, k): one kernel per channel, odd k; zero same-padding of k/2.
    pub kernels: Tensor<T>,
    pub axis: Axis1d,
}

impl<T: Scalar> DwConv1dParams<T> {
    pub fn new(kernels: Tensor<T>, axis: Axis1d) -> Result<Self> {
        if kernels.rank() != 2 {
            return Err(Error::invalid("dwconv1d kernels must be rank 2 (C, k)"));
        }
        if kernels.shape()[1] % 2 == 0 {
            return Err(Error::invalid(format!(
                "dwconv1d kernel length {} must be odd",
                kernels.shape()[1]
            )));
        }
        Ok(DwConv1dParams { kernels, axis })
    }

    pub fn kernel_len(&self) -> usize {
        self.kernels.shape()[1]
    }
}

#[derive(Clone, Debug)]
pub struct GroupNormParams<T> {
    pub groups: usize,
    /// (C)
    pub gamma: Tensor<T>,
    /// (C)
    pub beta: Tensor<T>,
    pub eps: T,
}

impl<T: Scalar> GroupNormParams<T> {
    pub fn identity(channels: usize, groups: usize) -> Self {
        GroupNormParams {
            groups,
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            eps: T::from_f64c(GROUP_NORM_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
}

impl<T: Scalar> BatchNormParams<T> {
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: T::from_f64c(BATCH_NORM_EPS),
        }
    }
}

fn out_extent(input: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    let padded = input + 2 * p;
    if padded < k {
        return Err(Error::invalid(format!(
            "non-positive output extent: input {input} + 2*{p} < kernel {k}"
        )));
    }
    Ok((padded - k) / s + 1)
}

/// 2-D cross-correlation over an NCHW tensor.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &Conv2dParams<T>) -> Result<Tensor<T>> {
    p.validate()?;
    if x.rank() != 4 {
        return Err(Error::invalid("conv2d input must be rank 4 (N,C,H,W)"));
    }
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, kh, kw) =
        (p.weight.shape()[0], p.weight.shape()[1], p.weight.shape()[2], p.weight.shape()[3]);
    if cin != cin_g * p.groups {
        return Err(Error::ShapeMismatch {
            op: "conv2d channels",
            lhs: vec![cin],
            rhs: vec![cin_g * p.groups],
        });
    }
    if cin % p.groups != 0 {
        return Err(Error::Divisibility { what: "Cin", value: cin, by: p.groups });
    }
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let ho = out_extent(h, kh, sh, ph)?;
    let wo = out_extent(w, kw, sw, pw)?;
    let cout_g = cout / p.groups;

    let xd = x.data();
    let wd = p.weight.data();
    let mut out = vec![T::zero(); n * cout * ho * wo];

    // Parallelism over disjoint (n, cout) output planes keeps results
    // deterministic regardless of thread count.
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(plane, o)| {
        let ni = plane / cout;
        let co = plane % cout;
        let g = co / cout_g;
        let w_base = co * cin_g * kh * kw;
        let x_chan0 = g * cin_g;
        for oh in 0..ho {
            let ih0 = (oh * sh) as isize - ph as isize;
            for ow in 0..wo {
                let iw0 = (ow * sw) as isize - pw as isize;
                let mut acc = T::zero();
                for ci in 0..cin_g {
                    let x_base = ((ni * cin + x_chan0 + ci) * h) as isize;
                    let wk_base = w_base + ci * kh * kw;
                    for r in 0..kh {
                        let ih = ih0 + r as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let row = ((x_base + ih) * w as isize) as usize;
                        let wk_row = wk_base + r * kw;
                        for c in 0..kw {
                            let iw = iw0 + c as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            acc += xd[row + iw as usize] * wd[wk_row + c];
                        }
                    }
                }
                o[oh * wo + ow] = acc;
            }
        }
        if let Some(b) = &p.bias {
            let bv = b.data()[co];
            for v in o.iter_mut() {
                *v += bv;
            }
        }
    });

    Tensor::new(&[n, cout, ho, wo], out)
}

/// Per-channel 1-D convolution along H or W with zero same-padding; output
/// shape equals input shape.
pub fn dwconv1d<T: Scalar>(x: &Tensor<T>, p: &DwConv1dParams<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::invalid("dwconv1d input must be rank 4 (N,C,H,W)"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if p.kernels.shape()[0] != c {
        return Err(Error::ShapeMismatch {
            op: "dwconv1d channels",
            lhs: vec![c],
            rhs: vec![p.kernels.shape()[0]],
        });
    }
    let k = p.kernel_len();
    let half = (k / 2) as isize;
    let kd = p.kernels.data();
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    let axis_len = match p.axis {
        Axis1d::H => h,
        Axis1d::W => w,
    } as isize;

    for ni in 0..n {
        for ci in 0..c {
            let kern = &kd[ci * k..(ci + 1) * k];
            let base = (ni * c + ci) * h * w;
            for hi in 0..h {
                for wi in 0..w {
                    let pos = match p.axis {
                        Axis1d::H => hi,
                        Axis1d::W => wi,
                    } as isize;
                    let mut acc = T::zero();
                    for (j, &kv) in kern.iter().enumerate() {
                        let q = pos + j as isize - half;
                        if q < 0 || q >= axis_len {
                            continue;
                        }
                        let off = match p.axis {
                            Axis1d::H => base + q as usize * w + wi,
                            Axis1d::W => base + hi * w + q as usize,
                        };
                        acc += xd[off] * kv;
                    }
                    out[base + hi * w + wi] = acc;
                }
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Max pooling; padded cells are excluded from the window (windows clip at
/// the borders), so a constant input stays constant.
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let (out, _) = maxpool2d_argmax(x, k, stride, padding)?;
    Ok(out)
}

/// Max pooling that also returns the flat input index of each window maximum
/// (first maximal element in row-major scan).
pub fn maxpool2d_argmax<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if x.rank() != 4 {
        return Err(Error::invalid("maxpool2d input must be rank 4 (N,C,H,W)"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let ho = out_extent(h, k, stride, padding)?;
    let wo = out_extent(w, k, stride, padding)?;
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    let mut argmax = vec![0usize; out.len()];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let ih0 = (oh * stride) as isize - padding as isize;
                let iw0 = (ow * stride) as isize - padding as isize;
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for r in 0..k {
                    let ih = ih0 + r as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for cc in 0..k {
                        let iw = iw0 + cc as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let idx = base + ih as usize * w + iw as usize;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (plane * ho + oh) * wo + ow;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((Tensor::new(&[n, c, ho, wo], out)?, argmax))
}

/// Non-overlapping s-by-s average pooling; border windows clip (divide by the
/// actual cell count).
pub fn avgpool2d<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::invalid("avgpool2d input must be rank 4 (N,C,H,W)"));
    }
    if s == 0 {
        return Err(Error::invalid("avgpool2d block size must be positive"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let ho = h.div_ceil(s);
    let wo = w.div_ceil(s);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let h1 = (oh * s + s).min(h);
                let w1 = (ow * s + s).min(w);
                let mut acc = T::zero();
                for ih in oh * s..h1 {
                    for iw in ow * s..w1 {
                        acc += xd[base + ih * w + iw];
                    }
                }
                let cnt = (h1 - oh * s) * (w1 - ow * s);
                out[(plane * ho + oh) * wo + ow] = acc / T::from_f64c(cnt as f64);
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // branch on sign so exp never overflows
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid_scalar(v))
}

/// Numerically stable softmax along the last axis (row-max subtraction).
pub fn softmax_lastdim<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let last = x.extent(x.rank() - 1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(last) {
        let mx = row.iter().copied().fold(T::neg_infinity(), |m, v| if v > m { v } else { m });
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Group normalization over (N, C, ...) with per-channel affine.
pub fn group_norm<T: Scalar>(x: &Tensor<T>, p: &GroupNormParams<T>) -> Result<Tensor<T>> {
    let (out, _, _) = group_norm_stats(x, p)?;
    Ok(out)
}

/// Group normalization that also returns per-(sample, group) mean and inverse
/// standard deviation, as needed by the backward pass.
pub fn group_norm_stats<T: Scalar>(
    x: &Tensor<T>,
    p: &GroupNormParams<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    if x.rank() < 2 {
        return Err(Error::invalid("group_norm input must have (N, C, ...) layout"));
    }
    let n = x.shape()[0];
    let c = x.shape()[1];
    if c != p.channels() {
        return Err(Error::ShapeMismatch {
            op: "group_norm channels",
            lhs: vec![c],
            rhs: vec![p.channels()],
        });
    }
    if c % p.groups != 0 {
        return Err(Error::Divisibility { what: "C", value: c, by: p.groups });
    }
    let spatial: usize = x.shape()[2..].iter().product();
    let cg = c / p.groups;
    let group_len = cg * spatial;
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    let mut means = Vec::with_capacity(n * p.groups);
    let mut inv_stds = Vec::with_capacity(n * p.groups);
    let inv_len = T::one() / T::from_f64c(group_len as f64);
    for ni in 0..n {
        for g in 0..p.groups {
            let start = (ni * c + g * cg) * spatial;
            let seg = &xd[start..start + group_len];
            let mean = seg.iter().copied().sum::<T>() * inv_len;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_len;
            let inv_std = T::one() / (var + p.eps).sqrt();
            means.push(mean);
            inv_stds.push(inv_std);
            for ci in 0..cg {
                let ch = g * cg + ci;
                let gamma = p.gamma.data()[ch];
                let beta = p.beta.data()[ch];
                let o = start + ci * spatial;
                for i in 0..spatial {
                    out[o + i] = (xd[o + i] - mean) * inv_std * gamma + beta;
                }
            }
        }
    }
    Ok((Tensor::new(x.shape(), out)?, means, inv_stds))
}

/// Inference-mode batch normalization with fixed running statistics.
pub fn batch_norm_infer<T: Scalar>(x: &Tensor<T>, p: &BatchNormParams<T>) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::invalid("batch_norm input must have (N, C, ...) layout"));
    }
    let c = x.shape()[1];
    if c != p.gamma.len() {
        return Err(Error::ShapeMismatch {
            op: "batch_norm channels",
            lhs: vec![c],
            rhs: vec![p.gamma.len()],
        });
    }
    let n = x.shape()[0];
    let spatial: usize = x.shape()[2..].iter().product();
    let mut out = vec![T::zero(); x.len()];
    let xd = x.data();
    for ni in 0..n {
        for ci in 0..c {
            let scale = p.gamma.data()[ci] / (p.running_var.data()[ci] + p.eps).sqrt();
            let shift = p.beta.data()[ci] - p.running_mean.data()[ci] * scale;
            let base = (ni * c + ci) * spatial;
            for i in 0..spatial {
                out[base + i] = xd[base + i] * scale + shift;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

/// Nearest-neighbour upsampling by an integer factor on both spatial axes.
pub fn nearest_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::invalid("nearest_upsample input must be rank 4 (N,C,H,W)"));
    }
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be positive"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h * factor, w * factor);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    for plane in 0..n * c {
        let base = plane * h * w;
        let obase = plane * ho * wo;
        for oh in 0..ho {
            let ih = oh / factor;
            for ow in 0..wo {
                out[obase + oh * wo + ow] = xd[base + ih * w + ow / factor];
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

/// Batched matmul: (B, M, K) x (B, K, N) -> (B, M, N).
pub fn batched_matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]
    {
        return Err(Error::ShapeMismatch {
            op: "batched_matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = b.shape()[2];
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); bs * m * n];
    for bi in 0..bs {
        let ab = bi * m * k;
        let bb = bi * k * n;
        let ob = bi * m * n;
        for i in 0..m {
            for p in 0..k {
                let av = ad[ab + i * k + p];
                let brow = bb + p * n;
                let orow = ob + i * n;
                for j in 0..n {
                    out[orow + j] += av * bd[brow + j];
                }
            }
        }
    }
    Tensor::new(&[bs, m, n], out)
}
