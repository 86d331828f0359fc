use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::guided_filter::LUMA;
use crate::model::{ForwardPass, Model};
use crate::ops::gradient::{sobel_gradients, GRAD_EPS};
use crate::tensor::{Scalar, Shape, Tensor};

/// Below this total mask-gradient magnitude the consistency loss is 0.
pub const MAG_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the gradient-consistency term.
    pub w: f64,
    pub l2_weight: f64,
    /// Output channel whose probability feeds the consistency term.
    pub hair_class_index: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { w: 0.5, l2_weight: 2e-5, hair_class_index: 1 }
    }
}

impl LossConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.w >= 0.0 && self.w.is_finite()) || !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(Error::invalid("loss", format!("weights must be finite and non-negative (w {}, l2 {})", self.w, self.l2_weight)));
        }
        if self.hair_class_index >= num_classes {
            return Err(Error::invalid(
                "loss",
                format!("hair class {} out of range for {num_classes} classes", self.hair_class_index),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_m: f64,
    pub l_c: f64,
    pub l2: f64,
    pub total: f64,
}

/// Luminance of a `(n, 3, h, w)` image as `(n, 1, h, w)`.
pub fn to_gray<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.c() != 3 {
        return Err(Error::dim("to_gray", "channel", 3, s.c()));
    }
    let mut out = Tensor::zeros(s.with_c(1));
    let weights = LUMA.map(T::of);
    for n in 0..s.n() {
        let (r, g, b) = (image.plane(n, 0), image.plane(n, 1), image.plane(n, 2));
        for (i, o) in out.plane_mut(n, 0).iter_mut().enumerate() {
            *o = weights[0] * r[i] + weights[1] * g[i] + weights[2] * b[i];
        }
    }
    Ok(out)
}

/// Records the mask-image gradient consistency loss of `hair`
/// (`(n, 1, h, w)`) against a gray image of the same shape, averaged over
/// the batch.
pub fn gradient_consistency_graph<T: Scalar>(g: &mut Graph<T>, gray: &Tensor<T>, hair: Var) -> Result<Var> {
    gray.expect_shape("gradient_consistency", g.value(hair).shape())?;
    if gray.shape().c() != 1 {
        return Err(Error::dim("gradient_consistency", "channel", 1, gray.shape().c()));
    }
    let image = sobel_gradients(gray, true, GRAD_EPS)?;
    let (ix, iy) = (g.constant(image.gx), g.constant(image.gy));
    let mx = g.sobel_x(hair)?;
    let my = g.sobel_y(hair)?;
    let mag = g.hypot(mx, my)?;
    let den = g.add_scalar(mag, GRAD_EPS)?;
    let nx = g.div(mx, den)?;
    let ny = g.div(my, den)?;
    let dx = g.mul(nx, ix)?;
    let dy = g.mul(ny, iy)?;
    let dot = g.add(dx, dy)?;
    let dot2 = g.square(dot)?;
    let neg = g.scale(dot2, -1.0)?;
    let bracket = g.add_scalar(neg, 1.0)?;
    let weighted = g.mul(mag, bracket)?;
    let num = g.sum_per_sample(weighted)?;
    let den = g.sum_per_sample(mag)?;
    let per_sample = g.safe_div(num, den, MAG_FLOOR)?;
    g.mean(per_sample)
}

/// Consistency loss of a fixed probability map, batch mean.
pub fn gradient_consistency<T: Scalar>(gray: &Tensor<T>, hair_prob: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::no_grad();
    let hair = g.constant(hair_prob.clone());
    let loss = gradient_consistency_graph(&mut g, gray, hair)?;
    Ok(g.scalar(loss).as_f64())
}

pub fn bce_loss<T: Scalar>(probs: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    let mut g = Graph::no_grad();
    let p = g.constant(probs.clone());
    let loss = g.bce(p, target)?;
    Ok(g.scalar(loss).as_f64())
}

/// `l2_weight · Σ‖W‖²` over the regularized kernels.
pub fn l2_penalty<T: Scalar>(model: &Model<T>, l2_weight: f64) -> f64 {
    let sum: f64 = model
        .params()
        .iter()
        .filter(|p| p.kind.is_regularized())
        .flat_map(|p| p.value.data().iter().map(|v| v.as_f64() * v.as_f64()))
        .sum();
    l2_weight * sum
}

fn l2_graph<T: Scalar>(g: &mut Graph<T>, model: &Model<T>, vars: &[Option<Var>], l2_weight: f64) -> Result<Option<Var>> {
    let mut acc: Option<Var> = None;
    for (p, v) in model.params().iter().zip(vars) {
        let (true, Some(v)) = (p.kind.is_regularized(), v) else { continue };
        let sq = g.square(*v)?;
        let s = g.sum(sq)?;
        acc = Some(match acc {
            None => s,
            Some(a) => g.add(a, s)?,
        });
    }
    acc.map(|a| g.scale(a, l2_weight)).transpose()
}

/// Records `L_M + w·L_C + L2` for a forward pass on `g`.
///
/// `target` holds per-class probabilities matching the model output;
/// `gray` is the luminance of the input batch.
pub fn combined_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    pass: &ForwardPass<T>,
    target: &Tensor<T>,
    gray: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    cfg.validate(model.spec().num_classes)?;
    let l_m = g.bce(pass.probs, target)?;
    let hair = g.channel(pass.probs, cfg.hair_class_index)?;
    let l_c = gradient_consistency_graph(g, gray, hair)?;
    let mut total = l_m;
    if cfg.w != 0.0 {
        let weighted = g.scale(l_c, cfg.w)?;
        total = g.add(total, weighted)?;
    }
    let l2 = l2_graph(g, model, &pass.params, cfg.l2_weight)?;
    if let Some(l2) = l2 {
        total = g.add(total, l2)?;
    }
    let report = LossReport {
        l_m: g.scalar(l_m).as_f64(),
        l_c: g.scalar(l_c).as_f64(),
        l2: l2.map_or(0.0, |v| g.scalar(v).as_f64()),
        total: g.scalar(total).as_f64(),
    };
    Ok((total, report))
}

/// Loss parts for fixed model output `probs` on a `(n, 3, h, w)` image batch.
pub fn combined_loss<T: Scalar>(
    model: &Model<T>,
    probs: &Tensor<T>,
    target: &Tensor<T>,
    image: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<LossReport> {
    cfg.validate(probs.shape().c())?;
    let gray = to_gray(image)?;
    let l_m = bce_loss(probs, target)?;
    let l_c = gradient_consistency(&gray, &probs.channel(cfg.hair_class_index)?)?;
    let l2 = l2_penalty(model, cfg.l2_weight);
    Ok(LossReport { l_m, l_c, l2, total: l_m + cfg.w * l_c + l2 })
}

/// `(n, 1, h, w)` helper for hand-built cases.
pub fn plane<T: Scalar>(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor<T> {
    let data = (0..h * w).map(|i| T::of(f(i / w, i % w))).collect();
    Tensor::from_vec(Shape::new(1, 1, h, w), data).expect("sized buffer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build, ModelSpec, ParamKind, ConvKind};

    fn step_x(n: usize) -> Tensor<f64> {
        plane(n, n, |_, x| if x >= n / 2 { 1.0 } else { 0.0 })
    }

    fn step_y(n: usize) -> Tensor<f64> {
        plane(n, n, |y, _| if y >= n / 2 { 1.0 } else { 0.0 })
    }

    #[test]
    fn aligned_crossed_and_flat_cases() {
        assert!(gradient_consistency(&step_x(8), &step_x(8)).unwrap() <= 1e-3);
        assert!(gradient_consistency(&step_x(8), &step_y(8)).unwrap() >= 0.99);
        assert_eq!(gradient_consistency(&step_x(8), &plane(8, 8, |_, _| 0.4)).unwrap(), 0.0);
    }

    #[test]
    fn inversion_invariant() {
        let img: Tensor<f64> = plane(12, 12, |y, x| ((y * 7 + x * 3) % 11) as f64 / 11.0);
        let m: Tensor<f64> = plane(12, 12, |y, x| ((y * x) % 5) as f64 / 5.0);
        let inv = m.map(|v| 1.0 - v);
        let (a, b) = (gradient_consistency(&img, &m).unwrap(), gradient_consistency(&img, &inv).unwrap());
        assert!((a - b).abs() < 1e-6 && (0.0..=1.0).contains(&a));
    }

    #[test]
    fn gray_weights() {
        let img = Tensor::<f32>::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, 0.0, 0.0]).unwrap();
        assert!((to_gray(&img).unwrap().data()[0] - 0.299).abs() < 1e-7);
        assert!(to_gray(&Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2))).is_err());
    }

    fn small() -> Model<f64> {
        build(&ModelSpec::hairsegnet().with_input_size(32).with_width(0.125).with_decoder_depth(16), 5).unwrap()
    }

    #[test]
    fn l2_selectivity() {
        let mut m = small();
        let base = l2_penalty(&m, 2e-5);
        for p in m.params_mut() {
            if matches!(p.kind, ParamKind::Kernel(ConvKind::Depthwise | ConvKind::Classifier) | ParamKind::NormScale) {
                p.value = p.value.map(|v| 2.0 * v);
            }
        }
        assert_eq!(l2_penalty(&m, 2e-5), base);
        for p in m.params_mut() {
            if p.kind.is_regularized() {
                p.value = p.value.map(|_| 0.0);
            }
        }
        assert_eq!(l2_penalty(&m, 2e-5), 0.0);
    }

    #[test]
    fn combined_parts_add_up() {
        let m = small();
        let img: Tensor<f64> = Tensor::from_vec(
            Shape::new(1, 3, 32, 32),
            (0..3 * 32 * 32).map(|i| ((i * 13) % 17) as f64 / 17.0).collect(),
        )
        .unwrap();
        let probs = m.forward(&img).unwrap();
        let mut target = Tensor::zeros(probs.shape());
        for i in 0..32 * 32 {
            let hair = if i % 32 >= 16 { 1.0 } else { 0.0 };
            target.plane_mut(0, 1)[i] = hair;
            target.plane_mut(0, 0)[i] = 1.0 - hair;
        }
        let cfg = LossConfig::default();
        let r = combined_loss(&m, &probs, &target, &img, &cfg).unwrap();
        assert!((r.total - (r.l_m + 0.5 * r.l_c + r.l2)).abs() < 1e-12);
        let r0 = combined_loss(&m, &probs, &target, &img, &LossConfig { w: 0.0, ..cfg }).unwrap();
        assert_eq!(r0.total, r0.l_m + r0.l2);

        let mut g = Graph::new();
        let x = g.constant(img.clone());
        let pass = m.forward_graph(&mut g, x, crate::ops::NormMode::Infer).unwrap();
        let (_, gr) = combined_loss_graph(&mut g, &m, &pass, &target, &to_gray(&img).unwrap(), &cfg).unwrap();
        assert!((gr.total - r.total).abs() < 1e-9 && (gr.l2 - r.l2).abs() < 1e-12);
        assert!(LossConfig { hair_class_index: 2, ..cfg }.validate(2).is_err());
    }
}
