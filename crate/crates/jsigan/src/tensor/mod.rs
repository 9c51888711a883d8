//! Dense 4-D tensors with reverse-mode differentiation.
//!
//! All data in this crate lives in `(batch, channel, height, width)` layout,
//! row-major with `width` fastest. [`Tensor`] is an immutable value; every
//! operation produces a new tensor. [`graph::Graph`] records operations on a
//! tape so a scalar loss can be differentiated back to every reachable
//! [`param::Param`].

pub mod conv;
pub mod gemm;
pub mod graph;
pub mod init;
pub mod norm;
pub mod ops;
pub mod param;
pub mod snapshot;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Element type of a tensor: `f32` for training speed, `f64` for the
/// finite-difference test suites. A runtime switch selects one or the other
/// by instantiating the generic pipeline.
pub trait Element:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Identifier stored in snapshot headers.
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    /// `c = alpha * a @ b + beta * c` for row-major matrices.
    ///
    /// # Safety
    /// Pointer/stride contracts follow `matrixmultiply::?gemm`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

/// Element width tag used by the snapshot format.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dtype {
    F32,
    F64,
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `(batch, channel, height, width)` dimensions of a [`Tensor`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of a scalar (all dimensions 1).
    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    /// Total number of elements.
    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_scalar(&self) -> bool {
        self.count() == 1
    }

    /// Flat offset of `(n, c, y, x)`.
    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Immutable dense 4-D array. Clones share storage.
#[derive(Clone)]
pub struct Tensor<T> {
    shape: Shape,
    data: Arc<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            shape.count(),
            "tensor data length {} does not match shape {}",
            data.len(),
            shape
        );
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::new(shape, vec![T::zero(); shape.count()])
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor::new(shape, vec![value; shape.count()])
    }

    pub fn scalar(value: T) -> Self {
        Tensor::new(Shape::scalar(), vec![value])
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.count());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Value at `(n, c, y, x)`.
    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(n, c, y, x)]
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> T {
        assert!(
            self.shape.is_scalar(),
            "item() on non-scalar tensor {}",
            self.shape
        );
        self.data[0]
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combine with another tensor of identical shape.
    pub fn zip(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(
            self.shape, other.shape,
            "zip on mismatched shapes {} vs {}",
            self.shape, other.shape
        );
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(self.shape, data)
    }

    pub fn add(&self, other: &Tensor<T>) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Self {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum of elementwise products; shapes must match.
    pub fn dot(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "dot on mismatched shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a * b)
            .sum()
    }

    /// Convert element type (used when moving between test and train precision).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::new(
            self.shape,
            self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        )
    }

    /// Checked accessor used by operations that validate input shapes.
    pub(crate) fn expect_shape(&self, op: &'static str, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(op, shape, self.shape));
        }
        Ok(())
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}, ", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, "{:?})", &self.data[..])
        } else {
            write!(f, "{:?}...)", &self.data[..8])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_offsets_are_w_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.offset(0, 0, 0, 0), 0);
        assert_eq!(s.offset(0, 0, 0, 1), 1);
        assert_eq!(s.offset(0, 0, 1, 0), 5);
        assert_eq!(s.offset(0, 1, 0, 0), 20);
        assert_eq!(s.offset(1, 0, 0, 0), 60);
        assert_eq!(s.count(), 120);
    }

    #[test]
    fn from_fn_matches_at() {
        let t = Tensor::<f64>::from_fn(Shape::new(2, 2, 3, 3), |n, c, y, x| {
            (n * 1000 + c * 100 + y * 10 + x) as f64
        });
        assert_eq!(t.at(1, 1, 2, 2), 1122.0);
        assert_eq!(t.at(0, 1, 0, 2), 102.0);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn wrong_data_length_panics() {
        let _ = Tensor::<f32>::new(Shape::new(1, 1, 2, 2), vec![0.0; 3]);
    }
}
