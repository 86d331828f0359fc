//! Dense 4-D tensors in `(batch, channel, height, width)` row-major order.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is the working precision; `f64` exists
/// so finite-difference oracles have headroom.
pub trait Scalar:
    Float + Default + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a·b + beta * c` for row/column-strided matrices.
    ///
    /// `a` is `m×k`, `b` is `k×n`, `c` is `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize, what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs + (cols - 1) * cs;
    assert!(last < len, "gemm: operand {what} too short ({len} <= {last})");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                check_extent(a.len(), m, k, rsa, csa, "a");
                check_extent(b.len(), k, n, rsb, csb, "b");
                check_extent(c.len(), m, n, rsc, csc, "c");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched by the kernel lies within the
                // extents checked above, and `c` does not alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
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
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `(n, c, h, w)` extents.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }
    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.0[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.0[3]
    }
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
    /// Elements in one `(h, w)` plane.
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }
    pub fn with_c(self, c: usize) -> Self {
        Shape([self.n(), c, self.h(), self.w()])
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n(), self.c(), self.h(), self.w())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Axis names used in dimension errors.
pub const AXES: [&str; 4] = ["batch", "channel", "height", "width"];

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor { shape, data: vec![value; shape.numel()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::invalid(
                "tensor",
                format!("data length {} does not match shape {shape} ({} elements)", data.len(), shape.numel()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64s(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape.0;
        ((n * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// The `(h, w)` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c() + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.shape.c() * self.shape.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.shape.c() * self.shape.plane();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(op, other.shape)?;
        Ok(Tensor { shape: self.shape, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape("add_assign", other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum accumulated in `f64`.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        T::of(self.sum_f64() / self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    /// Copies one channel out as an `(n, 1, h, w)` tensor.
    pub fn channel(&self, c: usize) -> Result<Self> {
        if c >= self.shape.c() {
            return Err(Error::dim("channel", "channel", self.shape.c(), c + 1));
        }
        let mut out = Tensor::zeros(self.shape.with_c(1));
        for n in 0..self.shape.n() {
            out.plane_mut(n, 0).copy_from_slice(self.plane(n, c));
        }
        Ok(out)
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::invalid("stack", "no tensors to stack"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            for (axis, name) in AXES.iter().enumerate().skip(1) {
                if t.shape.0[axis] != s.0[axis] {
                    return Err(Error::dim("stack", name, s.0[axis], t.shape.0[axis]));
                }
            }
            n += t.shape.n();
            data.extend_from_slice(&t.data);
        }
        Self::from_vec(Shape::new(n, s.c(), s.h(), s.w()), data)
    }

    /// Sample `n` as a `(1, c, h, w)` tensor.
    pub fn select(&self, n: usize) -> Result<Self> {
        if n >= self.shape.n() {
            return Err(Error::dim("select", "batch", self.shape.n(), n + 1));
        }
        Ok(Tensor { shape: Shape::new(1, self.shape.c(), self.shape.h(), self.shape.w()), data: self.sample(n).to_vec() })
    }

    /// Mirrors every plane left to right.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.shape.w();
        let mut out = self.clone();
        for row in out.data.chunks_mut(w.max(1)) {
            row.reverse();
        }
        out
    }

    /// Errors with the first differing axis unless `self` has `shape`.
    pub fn expect_shape(&self, op: &'static str, shape: Shape) -> Result<()> {
        for (axis, name) in AXES.iter().enumerate() {
            if self.shape.0[axis] != shape.0[axis] {
                return Err(Error::dim(op, name, shape.0[axis], self.shape.0[axis]));
            }
        }
        Ok(())
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor{} {:?}{}", self.shape, preview, if self.data.len() > 8 { " …" } else { "" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec(Shape::new(1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(0, 1, 0, 1), 4.0);
        assert_eq!(t.plane(0, 1), &[3.0, 4.0]);
    }

    #[test]
    fn stack_and_select() {
        let a = Tensor::<f32>::full(Shape::new(1, 1, 2, 2), 1.0);
        let b = Tensor::<f32>::full(Shape::new(1, 1, 2, 2), 2.0);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 1, 2, 2));
        assert_eq!(s.select(1).unwrap(), b);
        let c = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 2));
        let err = Tensor::stack(&[&a, &c]).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
    }

    #[test]
    fn flip_reverses_columns() {
        let t = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 3), vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.flip_horizontal().data(), &[3., 2., 1., 6., 5., 4.]);
        assert_eq!(t.flip_horizontal().flip_horizontal(), t);
    }

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3x4
        let mut c = vec![1.0; 8];
        f64::gemm(2, 3, 4, 1.0, &a, 3, 1, &b, 4, 1, 2.0, &mut c, 4, 1);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = 2.0 + (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum::<f64>();
                assert_eq!(c[i * 4 + j], want);
            }
        }
    }
}
