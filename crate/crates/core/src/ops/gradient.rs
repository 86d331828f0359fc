//! 3×3 Sobel image gradients with replicated borders.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Added to the magnitude before normalizing a gradient to unit direction.
pub const GRAD_EPS: f64 = 1e-6;

/// Horizontal/vertical derivative and magnitude of a single-channel tensor.
#[derive(Clone, Debug)]
pub struct GradField<T = f32> {
    pub gx: Tensor<T>,
    pub gy: Tensor<T>,
    /// Always the unnormalized magnitude.
    pub mag: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    /// Right minus left.
    X,
    /// Down minus up.
    Y,
}

/// Taps as `(dy, dx, weight)`; zero-weight taps omitted.
fn taps(dir: Direction) -> [(isize, isize, f64); 6] {
    match dir {
        Direction::X => [(-1, -1, -1.0), (0, -1, -2.0), (1, -1, -1.0), (-1, 1, 1.0), (0, 1, 2.0), (1, 1, 1.0)],
        Direction::Y => [(-1, -1, -1.0), (-1, 0, -2.0), (-1, 1, -1.0), (1, -1, 1.0), (1, 0, 2.0), (1, 1, 1.0)],
    }
}

#[inline]
fn clamp(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

pub(crate) fn sobel<T: Scalar>(input: &Tensor<T>, dir: Direction) -> Tensor<T> {
    let s = input.shape();
    let (h, w) = (s.h(), s.w());
    let taps = taps(dir).map(|(dy, dx, k)| (dy, dx, T::of(k)));
    let mut out = Tensor::zeros(s);
    for n in 0..s.n() {
        for c in 0..s.c() {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = T::zero();
                    for &(dy, dx, k) in &taps {
                        acc += k * src[clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w)];
                    }
                    dst[y * w + x] = acc;
                }
            }
        }
    }
    out
}

/// Adjoint of [`sobel`]: scatters each output gradient back to its taps.
pub(crate) fn sobel_backward<T: Scalar>(dy_out: &Tensor<T>, dir: Direction) -> Tensor<T> {
    let s = dy_out.shape();
    let (h, w) = (s.h(), s.w());
    let taps = taps(dir).map(|(dy, dx, k)| (dy, dx, T::of(k)));
    let mut dx_in = Tensor::zeros(s);
    for n in 0..s.n() {
        for c in 0..s.c() {
            let g = dy_out.plane(n, c);
            let dst = dx_in.plane_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    let gv = g[y * w + x];
                    for &(dy, dx, k) in &taps {
                        dst[clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w)] += k * gv;
                    }
                }
            }
        }
    }
    dx_in
}

/// Sobel gradients of a single-channel tensor. With `normalize`, `(gx, gy)`
/// are divided by `mag + eps`; `mag` stays unnormalized either way.
pub fn sobel_gradients<T: Scalar>(input: &Tensor<T>, normalize: bool, eps: f64) -> Result<GradField<T>> {
    if input.shape().c() != 1 {
        return Err(Error::dim("sobel_gradients", "channel", 1, input.shape().c()));
    }
    let mut gx = sobel(input, Direction::X);
    let mut gy = sobel(input, Direction::Y);
    let mag = gx.zip_map(&gy, "sobel_gradients", |a, b| a.hypot(b))?;
    if normalize {
        let eps = T::of(eps);
        for ((x, y), &m) in gx.data_mut().iter_mut().zip(gy.data_mut()).zip(mag.data()) {
            *x = *x / (m + eps);
            *y = *y / (m + eps);
        }
    }
    Ok(GradField { gx, gy, mag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn step(n: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(Shape::new(1, 1, n, n));
        for y in 0..n {
            for x in n / 2..n {
                t.set(0, 0, y, x, 1.0);
            }
        }
        t
    }

    #[test]
    fn constant_image_has_no_gradient() {
        let g = sobel_gradients(&Tensor::<f32>::full(Shape::new(1, 1, 5, 6), 0.3), true, GRAD_EPS).unwrap();
        for t in [&g.gx, &g.gy, &g.mag] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn vertical_step_edge() {
        // Hand-applied kernel: columns 3 and 4 straddle the edge, each sees
        // (1 + 2 + 1) · (1 − 0) = 4 horizontally and nothing vertically.
        let g = sobel_gradients(&step(8), false, GRAD_EPS).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let want = if x == 3 || x == 4 { 4.0 } else { 0.0 };
                assert_eq!(g.gx.at(0, 0, y, x), want, "({y},{x})");
                assert_eq!(g.gy.at(0, 0, y, x), 0.0);
            }
        }
        let n = sobel_gradients(&step(8), true, GRAD_EPS).unwrap();
        assert!((n.gx.at(0, 0, 2, 3) - 1.0).abs() < 1e-6);
        assert_eq!(n.mag.at(0, 0, 2, 3), 4.0);
    }

    #[test]
    fn rotation_swaps_axes() {
        let mut img = Tensor::<f64>::zeros(Shape::new(1, 1, 7, 7));
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 11) as f64).sin();
        }
        // rotate 90° counter-clockwise: r[y][x] = img[x][n-1-y]
        let n = 7;
        let mut rot = Tensor::<f64>::zeros(img.shape());
        for y in 0..n {
            for x in 0..n {
                rot.set(0, 0, y, x, img.at(0, 0, x, n - 1 - y));
            }
        }
        let a = sobel_gradients(&img, false, GRAD_EPS).unwrap();
        let b = sobel_gradients(&rot, false, GRAD_EPS).unwrap();
        for y in 0..n {
            for x in 0..n {
                let (sy, sx) = (x, n - 1 - y);
                assert!((b.mag.at(0, 0, y, x) - a.mag.at(0, 0, sy, sx)).abs() < 1e-12);
                assert!((b.gx.at(0, 0, y, x).abs() - a.gy.at(0, 0, sy, sx).abs()).abs() < 1e-12);
                assert!((b.gy.at(0, 0, y, x).abs() - a.gx.at(0, 0, sy, sx).abs()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn magnitude_and_normalized_bounds() {
        let mut img = Tensor::<f32>::zeros(Shape::new(2, 1, 9, 9));
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i * 13 % 7) as f32 * 0.37).cos();
        }
        let raw = sobel_gradients(&img, false, GRAD_EPS).unwrap();
        let g = sobel_gradients(&img, true, GRAD_EPS).unwrap();
        for i in 0..img.len() {
            let m = raw.gx.data()[i].hypot(raw.gy.data()[i]);
            assert!((raw.mag.data()[i] - m).abs() <= 1e-6);
            let n2 = g.gx.data()[i].powi(2) + g.gy.data()[i].powi(2);
            assert!((0.0..=1.0 + 1e-5).contains(&n2), "{n2}");
        }
    }

    #[test]
    fn adjoint_identity() {
        // <sobel(x), y> == <x, sobel_backward(y)>
        let s = Shape::new(1, 1, 5, 4);
        let x = Tensor::<f64>::from_vec(s, (0..20).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let y = Tensor::<f64>::from_vec(s, (0..20).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        for dir in [Direction::X, Direction::Y] {
            let lhs: f64 = sobel(&x, dir).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(sobel_backward(&y, dir).data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_channel_rejected() {
        assert!(sobel_gradients(&Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4)), false, GRAD_EPS).is_err());
    }
}
