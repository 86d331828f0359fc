use crate::tensor::{Scalar, Shape, Tensor};

/// Nearest-neighbour 2× upsampling: every pixel fills its 2×2 block.
pub fn upsample_replicate2x<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let (h, w) = (s.h(), s.w());
    let mut out = Tensor::zeros(Shape::new(s.n(), s.c(), 2 * h, 2 * w));
    for n in 0..s.n() {
        for c in 0..s.c() {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                let row = &src[y * w..][..w];
                let (top, bottom) = dst[2 * y * 2 * w..][..4 * w].split_at_mut(2 * w);
                for (x, &v) in row.iter().enumerate() {
                    top[2 * x] = v;
                    top[2 * x + 1] = v;
                }
                bottom.copy_from_slice(top);
            }
        }
    }
    out
}

/// Adjoint of [`upsample_replicate2x`]: sums each 2×2 block.
pub(crate) fn upsample_replicate2x_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let s = dy.shape();
    let (h, w) = (s.h() / 2, s.w() / 2);
    let mut dx = Tensor::zeros(Shape::new(s.n(), s.c(), h, w));
    for n in 0..s.n() {
        for c in 0..s.c() {
            let src = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for y in 0..h {
                for x in 0..w {
                    let i = 2 * y * 2 * w + 2 * x;
                    dst[y * w + x] = src[i] + src[i + 1] + src[i + 2 * w] + src[i + 2 * w + 1];
                }
            }
        }
    }
    dx
}
