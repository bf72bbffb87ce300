//! Dense NCHW tensor with exactly the differentiable operations the
//! decomposition network needs.
//!
//! Values are stored as `f32`; every reduction (convolution taps, batch-norm
//! statistics, sums) accumulates in `f64` with a fixed per-element order, so
//! results are bit-reproducible run to run.

mod activation;
mod batchnorm;
mod conv;
mod pad;

pub use activation::{activation_backward, activation_forward, ActKind};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, batchnorm_forward_updating, BnCache, BnMode};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use pad::PaddingMode;

use crate::error::{Error, Result};

/// 4-D tensor in NCHW layout, row-major with `w` innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor4 {
    /// Build a tensor from existing data. All dims must be ≥ 1, the data
    /// length must match, and every value must be finite.
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "tensor dims must all be >= 1, got ({n},{c},{h},{w})"
            )));
        }
        let expect = n * c * h * w;
        if data.len() != expect {
            return Err(Error::InvalidArgument(format!(
                "tensor data length {} does not match shape ({n},{c},{h},{w}) = {expect}",
                data.len()
            )));
        }
        let t = Tensor4 { n, c, h, w, data };
        t.ensure_finite("Tensor4::new")?;
        Ok(t)
    }

    /// All-zero tensor of the given shape. Panics on a zero dim (programming
    /// error, not data).
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        assert!(n >= 1 && c >= 1 && h >= 1 && w >= 1, "zero tensor dim");
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    /// Tensor filled with one value.
    pub fn filled(n: usize, c: usize, h: usize, w: usize, v: f32) -> Self {
        let mut t = Self::zeros(n, c, h, w);
        t.data.fill(v);
        t
    }

    /// Build a tensor by evaluating `f(n, c, y, x)` at every position.
    pub fn from_fn(n: usize, c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut t = Self::zeros(n, c, h, w);
        let mut i = 0;
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data[i] = f(ni, ci, y, x);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn c(&self) -> usize {
        self.c
    }
    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }

    /// Shape as a tuple, for comparisons and error messages.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn shape_string(&self) -> String {
        format!("({},{},{},{})", self.n, self.c, self.h, self.w)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Flat index of `(n, c, y, x)`.
    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f32 {
        let i = self.idx(n, c, y, x);
        &mut self.data[i]
    }

    /// One `h×w` channel plane as a slice.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let base = (n * self.c + c) * self.h * self.w;
        &self.data[base..base + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let base = (n * self.c + c) * self.h * self.w;
        let hw = self.h * self.w;
        &mut self.data[base..base + hw]
    }

    /// Error unless every element is finite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value in {context} at flat index {pos} (shape {})",
                self.shape_string()
            )));
        }
        Ok(())
    }

    /// Error unless both tensors have identical shape.
    pub fn ensure_same_shape(&self, other: &Tensor4, context: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                context,
                lhs: self.shape_string(),
                rhs: other.shape_string(),
            });
        }
        Ok(())
    }

    /// Element-wise map into a new tensor.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor4 {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Tensor4, context: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor4> {
        self.ensure_same_shape(other, context)?;
        Ok(Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other`, element-wise.
    pub fn add_assign(&mut self, other: &Tensor4, context: &'static str) -> Result<()> {
        self.ensure_same_shape(other, context)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Sum of all elements, accumulated in f64 in storage order.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Mean of all elements, in f64.
    pub fn mean_f64(&self) -> f64 {
        self.sum_f64() / self.len() as f64
    }
}

/// Concatenate two tensors along the channel axis (`a`'s channels first).
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(Error::ShapeMismatch {
            context: "concat_channels",
            lhs: a.shape_string(),
            rhs: b.shape_string(),
        });
    }
    let mut out = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
    for n in 0..a.n {
        for c in 0..a.c {
            out.plane_mut(n, c).copy_from_slice(a.plane(n, c));
        }
        for c in 0..b.c {
            out.plane_mut(n, a.c + c).copy_from_slice(b.plane(n, c));
        }
    }
    Ok(out)
}

/// Backward of [`concat_channels`]: split a gradient back into the two
/// original channel blocks (`c_a` channels to the first).
pub fn split_channels(grad: &Tensor4, c_a: usize) -> Result<(Tensor4, Tensor4)> {
    if c_a == 0 || c_a >= grad.c {
        return Err(Error::InvalidArgument(format!(
            "split at {c_a} channels is outside 1..{}",
            grad.c
        )));
    }
    let c_b = grad.c - c_a;
    let mut a = Tensor4::zeros(grad.n, c_a, grad.h, grad.w);
    let mut b = Tensor4::zeros(grad.n, c_b, grad.h, grad.w);
    for n in 0..grad.n {
        for c in 0..c_a {
            a.plane_mut(n, c).copy_from_slice(grad.plane(n, c));
        }
        for c in 0..c_b {
            b.plane_mut(n, c).copy_from_slice(grad.plane(n, c_a + c));
        }
    }
    Ok((a, b))
}
