//! Edge-preserving guided filtering in time linear in the pixel count.
//!
//! Window means use summed-area tables, so the cost does not depend on the
//! radius. Windows are clipped at the borders and averaged over the pixels
//! they actually contain.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_RADIUS: usize = 4;
pub const DEFAULT_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuideMode {
    /// Guide converted to luminance; scalar regression per window.
    Gray,
    /// Full colour guide; 3×3 covariance solve per window.
    Rgb,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidedFilterParams {
    pub radius: usize,
    pub eps: f64,
    pub guide_mode: GuideMode,
}

impl Default for GuidedFilterParams {
    fn default() -> Self {
        GuidedFilterParams { radius: DEFAULT_RADIUS, eps: DEFAULT_EPS, guide_mode: GuideMode::Gray }
    }
}

impl GuidedFilterParams {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::invalid("guided_filter", "radius must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid("guided_filter", format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Mean over the `(2r+1)²` window clipped to a `h × w` plane.
pub fn box_mean(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    debug_assert_eq!(plane.len(), h * w);
    let stride = w + 1;
    let mut table = vec![0.0f64; (h + 1) * stride];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += plane[y * w + x];
            table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let sum = table[y1 * stride + x1] - table[y0 * stride + x1] - table[y1 * stride + x0] + table[y0 * stride + x0];
            out[y * w + x] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Plane-wise [`box_mean`] of a tensor.
pub fn box_filter<T: Scalar>(input: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r < 1 {
        return Err(Error::invalid("box_filter", "radius must be at least 1"));
    }
    let s = input.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n() {
        for c in 0..s.c() {
            let plane: Vec<f64> = input.plane(n, c).iter().map(|v| v.as_f64()).collect();
            for (o, v) in out.plane_mut(n, c).iter_mut().zip(box_mean(&plane, s.h(), s.w(), r)) {
                *o = T::of(v);
            }
        }
    }
    Ok(out)
}

/// Luminance weights shared with the gradient-consistency loss.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn planes<T: Scalar>(t: &Tensor<T>, n: usize) -> Vec<Vec<f64>> {
    (0..t.shape().c()).map(|c| t.plane(n, c).iter().map(|v| v.as_f64()).collect()).collect()
}

/// Filters the single-channel `input` with `guide` (`(n, 1|3, h, w)`, same
/// batch and spatial size).
pub fn guided_filter<T: Scalar>(guide: &Tensor<T>, input: &Tensor<T>, params: &GuidedFilterParams) -> Result<Tensor<T>> {
    params.validate()?;
    let (g, p) = (guide.shape(), input.shape());
    if p.c() != 1 {
        return Err(Error::dim("guided_filter", "channel", 1, p.c()));
    }
    for (axis, name) in [(0, "batch"), (2, "height"), (3, "width")] {
        if g.0[axis] != p.0[axis] {
            return Err(Error::dim("guided_filter", name, p.0[axis], g.0[axis]));
        }
    }
    let (h, w, r) = (p.h(), p.w(), params.radius);
    let mut out = Tensor::zeros(p);
    for n in 0..p.n() {
        let src = planes(input, n).remove(0);
        let guides = planes(guide, n);
        let result = match (params.guide_mode, guides.len()) {
            (GuideMode::Gray, 1) => gray(&guides[0], &src, h, w, r, params.eps),
            (GuideMode::Gray, 3) => {
                let luma: Vec<f64> = (0..h * w).map(|i| (0..3).map(|c| LUMA[c] * guides[c][i]).sum()).collect();
                gray(&luma, &src, h, w, r, params.eps)
            }
            (GuideMode::Rgb, 3) => rgb(&guides, &src, h, w, r, params.eps)?,
            (_, c) => return Err(Error::invalid("guided_filter", format!("{:?} guide cannot have {c} channels", params.guide_mode))),
        };
        for (o, v) in out.plane_mut(n, 0).iter_mut().zip(result) {
            *o = T::of(v);
        }
    }
    Ok(out)
}

fn gray(guide: &[f64], src: &[f64], h: usize, w: usize, r: usize, eps: f64) -> Vec<f64> {
    let mean = |v: &[f64]| box_mean(v, h, w, r);
    let product = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let (mean_i, mean_p) = (mean(guide), mean(src));
    let corr_ii = mean(&product(guide, guide));
    let corr_ip = mean(&product(guide, src));
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for i in 0..h * w {
        let var = corr_ii[i] - mean_i[i] * mean_i[i];
        let cov = corr_ip[i] - mean_i[i] * mean_p[i];
        a[i] = cov / (var + eps);
        b[i] = mean_p[i] - a[i] * mean_i[i];
    }
    let (mean_a, mean_b) = (mean(&a), mean(&b));
    (0..h * w).map(|i| mean_a[i] * guide[i] + mean_b[i]).collect()
}

fn rgb(guide: &[Vec<f64>], src: &[f64], h: usize, w: usize, r: usize, eps: f64) -> Result<Vec<f64>> {
    let mean = |v: &[f64]| box_mean(v, h, w, r);
    let product = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mean_i: Vec<Vec<f64>> = guide.iter().map(|c| mean(c)).collect();
    let mean_p = mean(src);
    let corr_ip: Vec<Vec<f64>> = guide.iter().map(|c| mean(&product(c, src))).collect();
    let mut corr_ii = [[Vec::new(), Vec::new(), Vec::new()], [Vec::new(), Vec::new(), Vec::new()], [
        Vec::new(),
        Vec::new(),
        Vec::new(),
    ]];
    for j in 0..3 {
        for k in j..3 {
            corr_ii[j][k] = mean(&product(&guide[j], &guide[k]));
        }
    }
    let mut a = vec![vec![0.0; h * w]; 3];
    let mut b = vec![0.0; h * w];
    for i in 0..h * w {
        let sigma = Matrix3::from_fn(|j, k| {
            let (lo, hi) = (j.min(k), j.max(k));
            corr_ii[lo][hi][i] - mean_i[j][i] * mean_i[k][i] + if j == k { eps } else { 0.0 }
        });
        let cov = Vector3::from_fn(|j, _| corr_ip[j][i] - mean_i[j][i] * mean_p[i]);
        let coef = sigma
            .lu()
            .solve(&cov)
            .ok_or_else(|| Error::invalid("guided_filter", "singular guide covariance"))?;
        for j in 0..3 {
            a[j][i] = coef[j];
        }
        b[i] = mean_p[i] - (0..3).map(|j| coef[j] * mean_i[j][i]).sum::<f64>();
    }
    let mean_a: Vec<Vec<f64>> = a.iter().map(|c| mean(c)).collect();
    let mean_b = mean(&b);
    Ok((0..h * w).map(|i| (0..3).map(|j| mean_a[j][i] * guide[j][i]).sum::<f64>() + mean_b[i]).collect())
}

/// Guided filtering of a `(n, 1, h, w)` hair probability with the
/// `(n, 3, h, w)` image as guide, clamped to `[0, 1]`.
pub fn refine_mask<T: Scalar>(image: &Tensor<T>, coarse: &Tensor<T>, params: &GuidedFilterParams) -> Result<Tensor<T>> {
    let out = guided_filter(image, coarse, params)?;
    Ok(out.map(|v| v.max(T::zero()).min(T::one())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_mean(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut sum, mut count) = (0.0, 0.0);
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                        sum += plane[yy * w + xx];
                        count += 1.0;
                    }
                }
                out[y * w + x] = sum / count;
            }
        }
        out
    }

    #[test]
    fn box_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plane: Vec<f64> = (0..32 * 32).map(|_| rng.gen()).collect();
        for r in [1, 4, 8] {
            let fast = box_mean(&plane, 32, 32, r);
            let slow = naive_mean(&plane, 32, 32, r);
            assert!(fast.iter().zip(&slow).all(|(a, b)| (a - b).abs() < 1e-5), "r = {r}");
        }
        let flat = Tensor::<f32>::full(Shape::new(1, 2, 5, 9), 0.3);
        assert!(box_filter(&flat, 3).unwrap().data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn constant_guide_and_input_pass_through() {
        let c = Tensor::<f64>::full(Shape::new(1, 1, 8, 8), 0.7);
        let out = guided_filter(&c, &c, &GuidedFilterParams::default()).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-9));
        let guide = Tensor::<f64>::full(Shape::new(1, 3, 8, 8), 0.2);
        let rgb = GuidedFilterParams { guide_mode: GuideMode::Rgb, ..Default::default() };
        let out = guided_filter(&guide, &c, &rgb).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-9));
    }

    #[test]
    fn huge_eps_smooths_to_double_box_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..16 * 16).map(|_| rng.gen()).collect();
        let guide = Tensor::from_vec(Shape::new(1, 1, 16, 16), data.iter().map(|v| 1.0 - v).collect()).unwrap();
        let input = Tensor::from_vec(Shape::new(1, 1, 16, 16), data.clone()).unwrap();
        let out = guided_filter(&guide, &input, &GuidedFilterParams { eps: 1e6, radius: 2, ..Default::default() }).unwrap();
        let want = naive_mean(&naive_mean(&data, 16, 16, 2), 16, 16, 2);
        assert!(out.data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn zero_mask_and_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let image = Tensor::<f32>::from_vec(Shape::new(1, 3, 12, 12), (0..432).map(|_| rng.gen()).collect()).unwrap();
        let zero = Tensor::<f32>::zeros(Shape::new(1, 1, 12, 12));
        let out = refine_mask(&image, &zero, &GuidedFilterParams::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let mask = Tensor::<f32>::from_vec(Shape::new(1, 1, 12, 12), (0..144).map(|_| rng.gen_range(0.0..=1.0f32).round()).collect()).unwrap();
        let out = refine_mask(&image, &mask, &GuidedFilterParams { eps: 1e-6, radius: 1, ..Default::default() }).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_bad_arguments() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 4));
        assert!(guided_filter(&t, &t, &GuidedFilterParams { radius: 0, ..Default::default() }).is_err());
        assert!(guided_filter(&t, &t, &GuidedFilterParams { eps: 0.0, ..Default::default() }).is_err());
        assert!(guided_filter(&t, &t, &GuidedFilterParams { guide_mode: GuideMode::Rgb, ..Default::default() }).is_err());
        let wide = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 5));
        assert!(guided_filter(&t, &wide, &GuidedFilterParams::default()).is_err());
    }
}
