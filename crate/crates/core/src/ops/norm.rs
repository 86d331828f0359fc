//! Per-channel batch normalization.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub const BN_EPS: f64 = 1e-6;
/// Weight of the current batch in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    /// Blends in one batch's mean and (unbiased) variance.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T]) {
        let m = T::of(BN_MOMENTUM);
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}

/// Intermediates a train-mode forward pass keeps for the adjoint.
#[derive(Clone, Debug)]
pub(crate) struct BatchStats<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Unbiased estimate, fed to the running statistics.
    pub var_unbiased: Vec<T>,
}

fn check_params<T: Scalar>(input: Shape, scale: &[T], shift: &[T]) -> Result<()> {
    if scale.len() != input.c() {
        return Err(Error::dim("batch_norm", "channel", input.c(), scale.len()));
    }
    if shift.len() != input.c() {
        return Err(Error::dim("batch_norm", "channel", input.c(), shift.len()));
    }
    Ok(())
}

pub fn batch_norm<T: Scalar>(
    input: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    stats: &mut RunningStats<T>,
    mode: NormMode,
) -> Result<Tensor<T>> {
    match mode {
        NormMode::Train => {
            let (out, batch) = train_forward(input, scale, shift)?;
            stats.update(&batch.mean, &batch.var_unbiased);
            Ok(out)
        }
        NormMode::Infer => infer_forward(input, scale, shift, &stats.mean, &stats.var),
    }
}

pub(crate) fn train_forward<T: Scalar>(
    input: &Tensor<T>,
    scale: &[T],
    shift: &[T],
) -> Result<(Tensor<T>, BatchStats<T>)> {
    let s = input.shape();
    check_params(s, scale, shift)?;
    let count = s.n() * s.plane();
    if count == 0 {
        return Err(Error::invalid("batch_norm", "train mode needs a non-empty batch"));
    }
    let mut out = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let (mut mean, mut inv_std, mut var_unbiased) = (vec![T::zero(); s.c()], vec![T::zero(); s.c()], vec![T::zero(); s.c()]);
    for c in 0..s.c() {
        let mut sum = 0.0;
        for n in 0..s.n() {
            sum += input.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = sum / count as f64;
        let mut sq = 0.0;
        for n in 0..s.n() {
            sq += input.plane(n, c).iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>();
        }
        let var = sq / count as f64;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        mean[c] = T::of(mu);
        inv_std[c] = T::of(istd);
        var_unbiased[c] = T::of(if count > 1 { sq / (count - 1) as f64 } else { var });
        let (mu_t, istd_t) = (mean[c], inv_std[c]);
        for n in 0..s.n() {
            let src = input.plane(n, c);
            let xh = xhat.plane_mut(n, c);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = (v - mu_t) * istd_t;
            }
            let y = out.plane_mut(n, c);
            for (d, &v) in y.iter_mut().zip(xhat.plane(n, c)) {
                *d = scale[c] * v + shift[c];
            }
        }
    }
    Ok((out, BatchStats { xhat, inv_std, mean, var_unbiased }))
}

/// Returns `(dx, dscale, dshift)`.
pub(crate) fn train_backward<T: Scalar>(
    batch: &BatchStats<T>,
    scale: &[T],
    dy: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let s = dy.shape();
    let m = T::of((s.n() * s.plane()) as f64);
    let mut dx = Tensor::zeros(s);
    let (mut dscale, mut dshift) = (vec![T::zero(); s.c()], vec![T::zero(); s.c()]);
    for c in 0..s.c() {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for n in 0..s.n() {
            for (&g, &xh) in dy.plane(n, c).iter().zip(batch.xhat.plane(n, c)) {
                sum_dy += g;
                sum_dy_xhat += g * xh;
            }
        }
        dscale[c] = sum_dy_xhat;
        dshift[c] = sum_dy;
        let k = scale[c] * batch.inv_std[c] / m;
        for n in 0..s.n() {
            let xh = batch.xhat.plane(n, c);
            let g = dy.plane(n, c);
            for ((d, &gv), &xv) in dx.plane_mut(n, c).iter_mut().zip(g).zip(xh) {
                *d = k * (m * gv - sum_dy - xv * sum_dy_xhat);
            }
        }
    }
    (dx, dscale, dshift)
}

pub(crate) fn infer_forward<T: Scalar>(
    input: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    mean: &[T],
    var: &[T],
) -> Result<Tensor<T>> {
    let s = input.shape();
    check_params(s, scale, shift)?;
    check_params(s, mean, var)?;
    let mut out = Tensor::zeros(s);
    for c in 0..s.c() {
        let k = scale[c] / (var[c] + T::of(BN_EPS)).sqrt();
        let b = shift[c] - k * mean[c];
        for n in 0..s.n() {
            for (d, &v) in out.plane_mut(n, c).iter_mut().zip(input.plane(n, c)) {
                *d = k * v + b;
            }
        }
    }
    Ok(out)
}

/// Returns `(dx, dscale, dshift)` for the running-statistics affine map.
pub(crate) fn infer_backward<T: Scalar>(
    input: &Tensor<T>,
    scale: &[T],
    mean: &[T],
    var: &[T],
    dy: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let s = dy.shape();
    let mut dx = Tensor::zeros(s);
    let (mut dscale, mut dshift) = (vec![T::zero(); s.c()], vec![T::zero(); s.c()]);
    for c in 0..s.c() {
        let istd = T::one() / (var[c] + T::of(BN_EPS)).sqrt();
        for n in 0..s.n() {
            for ((d, &g), &x) in dx.plane_mut(n, c).iter_mut().zip(dy.plane(n, c)).zip(input.plane(n, c)) {
                *d = g * scale[c] * istd;
                dscale[c] += g * (x - mean[c]) * istd;
                dshift[c] += g;
            }
        }
    }
    (dx, dscale, dshift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_channel_maps_to_shift() {
        let x = Tensor::<f32>::full(Shape::new(2, 1, 3, 3), 4.2);
        let mut stats = RunningStats::new(1);
        let y = batch_norm(&x, &[2.0], &[0.25], &mut stats, NormMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn infer_with_unit_stats_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let s = Shape::new(1, 2, 4, 4);
        let x = Tensor::<f32>::from_vec(s, (0..s.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut stats = RunningStats::new(2);
        let y = batch_norm(&x, &[1.0, 1.0], &[0.0, 0.0], &mut stats, NormMode::Infer).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn train_output_has_target_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let s = Shape::new(4, 2, 8, 8);
        let x = Tensor::<f64>::from_vec(s, (0..s.numel()).map(|_| rng.gen_range(-5.0..9.0)).collect()).unwrap();
        let (scale, shift) = ([1.5, -0.5], [0.3, 2.0]);
        let mut stats = RunningStats::new(2);
        let y = batch_norm(&x, &scale, &shift, &mut stats, NormMode::Train).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!((mean - shift[c]).abs() < 1e-3, "{mean}");
            assert!((std - f64::abs(scale[c])).abs() < 1e-3, "{std}");
        }
        assert!(stats.mean.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn empty_batch_is_refused_in_train_mode() {
        let x = Tensor::<f32>::zeros(Shape::new(0, 1, 2, 2));
        let mut stats = RunningStats::new(1);
        assert!(batch_norm(&x, &[1.0], &[0.0], &mut stats, NormMode::Train).is_err());
        assert!(batch_norm(&Tensor::<f32>::zeros(Shape::new(1, 2, 2, 2)), &[1.0], &[0.0], &mut stats, NormMode::Train).is_err());
    }
}
