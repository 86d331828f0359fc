use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub(crate) fn relu_backward<T: Scalar>(input: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

/// Per-pixel softmax across the channel axis.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.c() < 2 {
        return Err(Error::invalid("softmax_channels", format!("needs at least 2 channels, got {}", s.c())));
    }
    let (c, p) = (s.c(), s.plane());
    let mut out = Tensor::zeros(s);
    for n in 0..s.n() {
        let x = input.sample(n);
        let y = out.sample_mut(n);
        for i in 0..p {
            let mut m = T::neg_infinity();
            for k in 0..c {
                m = m.max(x[k * p + i]);
            }
            let mut total = T::zero();
            for k in 0..c {
                let e = (x[k * p + i] - m).exp();
                y[k * p + i] = e;
                total += e;
            }
            for k in 0..c {
                y[k * p + i] = y[k * p + i] / total;
            }
        }
    }
    Ok(out)
}

/// `dx_k = y_k (dy_k − Σ_j y_j dy_j)`
pub(crate) fn softmax_backward<T: Scalar>(output: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let s = output.shape();
    let (c, p) = (s.c(), s.plane());
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n() {
        let y = output.sample(n);
        let g = dy.sample(n);
        let d = dx.sample_mut(n);
        for i in 0..p {
            let mut dot = T::zero();
            for k in 0..c {
                dot += y[k * p + i] * g[k * p + i];
            }
            for k in 0..c {
                d[k * p + i] = y[k * p + i] * (g[k * p + i] - dot);
            }
        }
    }
    dx
}
