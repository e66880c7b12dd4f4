//! Dense row-major tensors of rank 1..=4 (NCHW convention for feature maps)
//! and the primitive elementwise/shape operations the rest of the crate
//! builds on.
//!
//! Tensors are immutable once constructed; every operation returns a new
//! tensor, so values can be shared freely across threads.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// `f32` alias used on inference paths.
pub type Tensor32 = Tensor<f32>;
/// `f64` alias used for gradient verification.
pub type Tensor64 = Tensor<f64>;

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK || shape.iter().any(|&e| e == 0) {
            return Err(Error::BadConstruction { shape: shape.to_vec(), len: data.len() });
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::BadConstruction { shape: shape.to_vec(), len: data.len() });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let count: usize = shape.iter().product();
        Tensor::new(shape, vec![v; count]).expect("valid shape")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let count: usize = shape.iter().product();
        Tensor::new(shape, (0..count).map(|i| f(i)).collect()).expect("valid shape")
    }

    pub fn scalar_value(v: T) -> Self {
        Tensor::new(&[1], vec![v]).expect("valid")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Extent of `axis`, or 1 when the axis is beyond the rank (left-aligned
    /// NCHW reading: a rank-2 tensor has implicit trailing extents of 1).
    pub fn extent(&self, axis: usize) -> usize {
        self.shape.get(axis).copied().unwrap_or(1)
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.rank()];
        for i in (0..self.rank().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    /// Flat offset of a rank-4 index; the tensor must be rank 4.
    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        debug_assert_eq!(self.rank(), 4);
        let (cn, hn, wn) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cn + c) * hn + h) * wn + w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Elementwise product. `b` must either match `a`'s shape or be
    /// broadcastable to it: `b` is left-padded with extent-1 axes up to `a`'s
    /// rank, and extent-1 axes of `b` stretch. Output shape = `a.shape`.
    pub fn elementwise_mul(&self, b: &Self) -> Result<Self> {
        if self.shape == b.shape {
            return Ok(Tensor {
                shape: self.shape.clone(),
                data: self.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect(),
            });
        }
        let b_shape = broadcast_shape(&self.shape, &b.shape).ok_or(Error::ShapeMismatch {
            op: "elementwise_mul",
            lhs: self.shape.clone(),
            rhs: b.shape.clone(),
        })?;
        let out_data = broadcast_zip(&self.shape, &self.data, &b_shape, &b.data, |x, y| x * y);
        Ok(Tensor { shape: self.shape.clone(), data: out_data })
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(tensors: &[&Tensor<T>], axis: usize) -> Result<Self> {
        let first = tensors.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::AxisOutOfRange { axis, rank });
        }
        let mut out_shape = first.shape.clone();
        for t in &tensors[1..] {
            if t.rank() != rank
                || t.shape.iter().enumerate().any(|(i, &e)| i != axis && e != first.shape[i])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            out_shape[axis] += t.shape[axis];
        }

        // outer = product of extents before axis; inner = product after.
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(total);
        for o in 0..outer {
            for t in tensors {
                let chunk = t.shape[axis] * inner;
                let start = o * chunk;
                data.extend_from_slice(&t.data[start..start + chunk]);
            }
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange { axis, rank: self.rank() });
        }
        if start + len > self.shape[axis] || len == 0 {
            return Err(Error::invalid(format!(
                "narrow [{start}, {}) exceeds extent {} on axis {axis}",
                start + len,
                self.shape[axis]
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * self.shape[axis] + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Split into consecutive pieces of the given sizes along `axis`
    /// (inverse of [`Tensor::concat`]).
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        if sizes.iter().sum::<usize>() != self.extent(axis) {
            return Err(Error::invalid(format!(
                "split sizes {sizes:?} do not sum to extent {} on axis {axis}",
                self.extent(axis)
            )));
        }
        let mut parts = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &len in sizes {
            parts.push(self.narrow(axis, start, len)?);
            start += len;
        }
        Ok(parts)
    }

    /// Arithmetic mean over `axis`. With `keep`, the axis stays as extent 1;
    /// otherwise it is dropped (a rank-1 input reduces to shape `[1]`).
    pub fn reduce_mean(&self, axis: usize, keep: bool) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange { axis, rank: self.rank() });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let inv = T::one() / T::from_f64c(extent as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..extent {
                let base = (o * extent + k) * inner;
                for i in 0..inner {
                    data[o * inner + i] += self.data[base + i];
                }
            }
        }
        for v in &mut data {
            *v *= inv;
        }
        let mut out_shape = self.shape.clone();
        if keep {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
        }
        Ok(Tensor { shape: out_shape, data })
    }

    /// Reinterpret the flat buffer under a new shape with the same element
    /// count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        let to_len: usize = new_shape.iter().product();
        if to_len != self.len() || new_shape.is_empty() || new_shape.len() > MAX_RANK {
            return Err(Error::CountMismatch {
                from: self.shape.clone(),
                from_len: self.len(),
                to: new_shape.to_vec(),
                to_len,
            });
        }
        Ok(Tensor { shape: new_shape.to_vec(), data: self.data.clone() })
    }

    /// Swap the last two axes (rank >= 2).
    pub fn transpose_last2(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::AxisOutOfRange { axis: 1, rank: r });
        }
        let (m, n) = (self.shape[r - 2], self.shape[r - 1]);
        let outer: usize = self.shape[..r - 2].iter().product();
        let mut data = vec![T::zero(); self.len()];
        for o in 0..outer {
            let base = o * m * n;
            for i in 0..m {
                for j in 0..n {
                    data[base + j * m + i] = self.data[base + i * n + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        Ok(Tensor { shape, data })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |m, v| if v > m { v } else { m })
    }
}

/// Resolve the broadcast of `b_shape` onto `a_shape`: left-pad `b` with 1s,
/// then every axis must either match or have extent 1 in `b`.
fn broadcast_shape(a_shape: &[usize], b_shape: &[usize]) -> Option<Vec<usize>> {
    if b_shape.len() > a_shape.len() {
        return None;
    }
    let mut padded = vec![1; a_shape.len() - b_shape.len()];
    padded.extend_from_slice(b_shape);
    for (i, &e) in padded.iter().enumerate() {
        if e != a_shape[i] && e != 1 {
            return None;
        }
    }
    Some(padded)
}

/// Apply `f` elementwise with `b` broadcast (extent-1 stretch) onto `a`.
pub(crate) fn broadcast_zip<T: Scalar>(
    a_shape: &[usize],
    a: &[T],
    b_shape_padded: &[usize],
    b: &[T],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let rank = a_shape.len();
    let mut b_strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..rank).rev() {
        b_strides[i] = if b_shape_padded[i] == 1 { 0 } else { s };
        s *= b_shape_padded[i];
    }
    let total: usize = a_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut out = Vec::with_capacity(total);
    let mut b_off = 0usize;
    for flat in 0..total {
        out.push(f(a[flat], b[b_off]));
        // advance the multi-index (row-major), tracking b's offset
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            b_off += b_strides[ax];
            if idx[ax] < a_shape[ax] {
                break;
            }
            b_off -= b_strides[ax] * a_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Indices that broadcast-reduce back: sum `grad` (shaped like `a`) over the
/// axes where `b` had extent 1, producing a tensor shaped like `b`.
pub(crate) fn reduce_to_shape<T: Scalar>(grad: &Tensor<T>, b_shape: &[usize]) -> Tensor<T> {
    let a_shape = grad.shape().to_vec();
    let rank = a_shape.len();
    let mut padded = vec![1; rank - b_shape.len()];
    padded.extend_from_slice(b_shape);
    let mut b_strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..rank).rev() {
        b_strides[i] = if padded[i] == 1 { 0 } else { s };
        s *= padded[i];
    }
    let b_len: usize = padded.iter().product();
    let mut out = vec![T::zero(); b_len];
    let mut idx = vec![0usize; rank];
    let mut b_off = 0usize;
    for &g in grad.data() {
        out[b_off] += g;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            b_off += b_strides[ax];
            if idx[ax] < a_shape[ax] {
                break;
            }
            b_off -= b_strides[ax] * a_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(b_shape, out).expect("reduced shape valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_identity_broadcast() {
        let a = Tensor::new(&[2], vec![2.0f64, 3.0]).unwrap();
        let b = Tensor::new(&[1], vec![1.0f64]).unwrap();
        assert_eq!(a.elementwise_mul(&b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn mul_channel_broadcast() {
        // (1,2,2,2) all 4.0 times per-channel (1,2,1,1) = [0.5, 0.25]
        let a = Tensor::full(&[1, 2, 2, 2], 4.0f64);
        let b = Tensor::new(&[1, 2, 1, 1], vec![0.5, 0.25]).unwrap();
        let out = a.elementwise_mul(&b).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2, 2]);
        assert_eq!(&out.data()[..4], &[2.0; 4]);
        assert_eq!(&out.data()[4..], &[1.0; 4]);
    }

    #[test]
    fn mul_zero_annihilates() {
        let a = Tensor::new(&[2], vec![0.0f32, 0.0]).unwrap();
        let b = Tensor::new(&[2], vec![7.0f32, 9.0]).unwrap();
        assert_eq!(a.elementwise_mul(&b).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn mul_shape_error_names_both() {
        let a = Tensor::full(&[2, 3], 1.0f32);
        let b = Tensor::full(&[2, 2], 1.0f32);
        let err = a.elementwise_mul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::full(&[1, 2, 4, 4], 1.0f32);
        let b = Tensor::full(&[1, 2, 4, 4], 2.0f32);
        let out = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4, 4]);
        // four-way concat used by the pyramid-pooling block
        let four = Tensor::concat(&[&a, &a, &a, &a], 1).unwrap();
        assert_eq!(four.shape(), &[1, 8, 4, 4]);
    }

    #[test]
    fn concat_single_is_copy() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let out = Tensor::concat(&[&a], 0).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn concat_rejects_mismatched() {
        let a = Tensor::full(&[1, 2, 4, 4], 1.0f32);
        let b = Tensor::full(&[1, 2, 3, 4], 1.0f32);
        assert!(Tensor::concat(&[&a, &b], 1).is_err());
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::from_fn(&[1, 2, 2, 3], |i| i as f64);
        let b = Tensor::from_fn(&[1, 3, 2, 3], |i| (100 + i) as f64);
        let cat = Tensor::concat(&[&a, &b], 1).unwrap();
        let parts = cat.split(1, &[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn reduce_mean_hand_case() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let m = x.reduce_mean(3, false).unwrap();
        assert_eq!(m.shape(), &[1, 1, 2]);
        assert_eq!(m.data(), &[1.5, 3.5]);
        let kept = x.reduce_mean(3, true).unwrap();
        assert_eq!(kept.shape(), &[1, 1, 2, 1]);
    }

    #[test]
    fn reduce_mean_constant_and_identity() {
        let c = Tensor::full(&[2, 3, 4], 2.5f64);
        assert!(c.reduce_mean(1, false).unwrap().data().iter().all(|&v| v == 2.5));
        let x = Tensor::from_fn(&[2, 1, 3], |i| i as f64);
        let m = x.reduce_mean(1, true).unwrap();
        assert_eq!(m.data(), x.data());
    }

    #[test]
    fn reduce_mean_axis_error() {
        let x = Tensor::full(&[2, 2], 0.0f32);
        assert!(matches!(x.reduce_mean(2, false), Err(Error::AxisOutOfRange { .. })));
    }

    #[test]
    fn reshape_round_trip_and_reject() {
        let x = Tensor::from_fn(&[1, 4, 2, 2], |i| i as f32);
        let flat = x.reshape(&[1, 16]).unwrap();
        assert_eq!(flat.data(), x.data());
        assert_eq!(flat.reshape(&[1, 4, 2, 2]).unwrap(), x);
        let bad = Tensor::full(&[1, 3, 2, 2], 0.0f32);
        assert!(bad.reshape(&[1, 13]).is_err());
    }

    #[test]
    fn centered_slices_have_zero_mean() {
        let x = Tensor::from_fn(&[2, 3, 4, 5], |i| ((i * 37) % 11) as f64 - 5.0);
        for axis in 0..4 {
            let m = x.reduce_mean(axis, true).unwrap();
            let neg = m.scale(-1.0);
            let centered =
                x.add(&Tensor::from_fn(x.shape(), |_| 0.0).elementwise_mul(&x).unwrap()).unwrap();
            // centered = x - broadcast(mean): implement via mul on ones
            let ones = Tensor::full(x.shape(), 1.0f64);
            let mb = ones.elementwise_mul(&neg).unwrap();
            let centered = centered.add(&mb).unwrap();
            let re = centered.reduce_mean(axis, true).unwrap();
            assert!(re.data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn transpose_last2() {
        let x = Tensor::new(&[1, 2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = x.transpose_last2().unwrap();
        assert_eq!(t.shape(), &[1, 3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
