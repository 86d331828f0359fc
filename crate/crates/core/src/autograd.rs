//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! whatever the adjoint needs. [`Graph::backward`] walks the tape in reverse
//! and returns the gradient of a scalar with respect to every recorded node
//! that requires one.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ops::activation::{relu_backward, softmax_backward};
use crate::ops::conv::{self, ConvConfig};
use crate::ops::gradient::{sobel, sobel_backward, Direction};
use crate::ops::norm::{self, BatchStats};
use crate::ops::resample::upsample_replicate2x_backward;
use crate::ops::{relu, softmax_channels, upsample_replicate2x};
use crate::tensor::{Scalar, Shape, Tensor};

/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` inside the log.
pub const BCE_CLAMP: f64 = 1e-7;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    idx: usize,
    graph: u64,
}

enum Op<T> {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, cfg: ConvConfig },
    BatchNormTrain { x: Var, scale: Var, shift: Var, stats: BatchStats<T> },
    BatchNormInfer { x: Var, scale: Var, shift: Var, mean: Vec<T>, var: Vec<T> },
    Relu(Var),
    Softmax(Var),
    Upsample2x(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Hypot(Var, Var),
    Sobel(Var, Direction),
    Channel(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    SumPerSample(Var),
    SafeDiv { num: Var, den: Var, threshold: T },
    Bce { p: Var, target: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
    record: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// A graph that records operations for [`backward`](Self::backward).
    pub fn new() -> Self {
        Graph { id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), record: true }
    }

    /// A graph that only evaluates; nothing requires a gradient.
    pub fn no_grad() -> Self {
        Graph { record: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Graph(format!("variable {v:?} does not belong to graph {}", self.id)));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.idx].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var { idx: self.nodes.len() - 1, graph: self.id }
    }

    /// A leaf whose gradient is tracked (parameters, differentiable inputs).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = self.record;
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var { idx: self.nodes.len() - 1, graph: self.id }
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var { idx: self.nodes.len() - 1, graph: self.id }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.graph, self.id, "variable from another graph");
        &self.nodes[v.idx].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        v.graph == self.id && self.nodes[v.idx].requires_grad
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: ConvConfig) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let bias = match b {
            Some(b) => {
                self.check(b)?;
                Some(self.nodes[b.idx].value.data())
            }
            None => None,
        };
        let out = conv::forward(&self.nodes[x.idx].value, &self.nodes[w.idx].value, bias, &cfg)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv { x, w, b, cfg }, &inputs))
    }

    /// Batch normalization with batch statistics. Returns the output and the
    /// batch `(mean, unbiased var)` for the caller's running estimates.
    pub fn batch_norm_train(&mut self, x: Var, scale: Var, shift: Var) -> Result<(Var, Vec<T>, Vec<T>)> {
        for v in [x, scale, shift] {
            self.check(v)?;
        }
        let (out, stats) = norm::train_forward(
            &self.nodes[x.idx].value,
            self.nodes[scale.idx].value.data(),
            self.nodes[shift.idx].value.data(),
        )?;
        let (mean, var) = (stats.mean.clone(), stats.var_unbiased.clone());
        Ok((self.push(out, Op::BatchNormTrain { x, scale, shift, stats }, &[x, scale, shift]), mean, var))
    }

    pub fn batch_norm_infer(&mut self, x: Var, scale: Var, shift: Var, mean: &[T], var: &[T]) -> Result<Var> {
        for v in [x, scale, shift] {
            self.check(v)?;
        }
        let out = norm::infer_forward(
            &self.nodes[x.idx].value,
            self.nodes[scale.idx].value.data(),
            self.nodes[shift.idx].value.data(),
            mean,
            var,
        )?;
        let op = Op::BatchNormInfer { x, scale, shift, mean: mean.to_vec(), var: var.to_vec() };
        Ok(self.push(out, op, &[x, scale, shift]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = relu(&self.nodes[x.idx].value);
        Ok(self.push(out, Op::Relu(x), &[x]))
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = softmax_channels(&self.nodes[x.idx].value)?;
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = upsample_replicate2x(&self.nodes[x.idx].value);
        Ok(self.push(out, Op::Upsample2x(x), &[x]))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.nodes[a.idx].value.zip_map(&self.nodes[b.idx].value, name, f)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// `sqrt(a² + b²)`; the adjoint at the origin is taken as zero.
    pub fn hypot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "hypot", |x, y| x.hypot(y), Op::Hypot(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.check(a)?;
        let k = T::of(k);
        let out = self.nodes[a.idx].value.map(|v| v * k);
        Ok(self.push(out, Op::Scale(a, k), &[a]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let c = T::of(c);
        let out = self.nodes[a.idx].value.map(|v| v + c);
        Ok(self.push(out, Op::AddScalar(a), &[a]))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.nodes[a.idx].value.map(|v| v * v);
        Ok(self.push(out, Op::Square(a), &[a]))
    }

    pub fn sobel_x(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = sobel(&self.nodes[a.idx].value, Direction::X);
        Ok(self.push(out, Op::Sobel(a, Direction::X), &[a]))
    }

    pub fn sobel_y(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = sobel(&self.nodes[a.idx].value, Direction::Y);
        Ok(self.push(out, Op::Sobel(a, Direction::Y), &[a]))
    }

    /// One channel as an `(n, 1, h, w)` node.
    pub fn channel(&mut self, a: Var, c: usize) -> Result<Var> {
        self.check(a)?;
        let out = self.nodes[a.idx].value.channel(c)?;
        Ok(self.push(out, Op::Channel(a, c), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = Tensor::scalar(self.nodes[a.idx].value.sum());
        Ok(self.push(out, Op::SumAll(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = Tensor::scalar(self.nodes[a.idx].value.mean());
        Ok(self.push(out, Op::MeanAll(a), &[a]))
    }

    /// Sum over `(c, h, w)` for each sample: `(n, 1, 1, 1)`.
    pub fn sum_per_sample(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = &self.nodes[a.idx].value;
        let n = t.shape().n();
        let data = (0..n).map(|i| t.sample(i).iter().copied().sum()).collect();
        let out = Tensor::from_vec(Shape::new(n, 1, 1, 1), data)?;
        Ok(self.push(out, Op::SumPerSample(a), &[a]))
    }

    /// Elementwise `num / den`, or zero wherever `den < threshold`.
    pub fn safe_div(&mut self, num: Var, den: Var, threshold: f64) -> Result<Var> {
        let thr = T::of(threshold);
        self.binary(num, den, "safe_div", move |a, b| if b < thr { T::zero() } else { a / b }, Op::SafeDiv {
            num,
            den,
            threshold: thr,
        })
    }

    /// Mean binary cross-entropy of probabilities `p` against `target`, with
    /// `p` clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]`.
    pub fn bce(&mut self, p: Var, target: &Tensor<T>) -> Result<Var> {
        self.check(p)?;
        let pv = &self.nodes[p.idx].value;
        target.expect_shape("bce", pv.shape())?;
        let (lo, hi) = (BCE_CLAMP, 1.0 - BCE_CLAMP);
        let mut total = 0.0f64;
        for (&pp, &t) in pv.data().iter().zip(target.data()) {
            let pc = pp.as_f64().clamp(lo, hi);
            let t = t.as_f64();
            total -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        let out = Tensor::scalar(T::of(total / pv.len().max(1) as f64));
        Ok(self.push(out, Op::Bce { p, target: target.clone() }, &[p]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.record {
            return Err(Error::Graph("graph was built without gradient recording".into()));
        }
        self.check(loss)?;
        let lv = &self.nodes[loss.idx].value;
        if lv.len() != 1 {
            return Err(Error::Graph(format!("loss must be a scalar, got shape {}", lv.shape())));
        }
        if !lv.all_finite() {
            return Err(Error::Graph(format!("loss is not finite ({:?})", lv.data()[0])));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.idx).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, gi) in self.adjoint(node, &g)? {
                if !self.nodes[input.idx].requires_grad {
                    continue;
                }
                match &mut grads[input.idx] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot @ None => *slot = Some(gi),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { graph: self.id, grads })
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.idx].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    /// Gradients of `node`'s inputs given the gradient `g` of its output.
    fn adjoint(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let mut out = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, cfg } => {
                let need_b = b.is_some_and(|b| self.needs(b));
                let grads = conv::backward(self.val(*x), self.val(*w), cfg, g, self.needs(*x), self.needs(*w), need_b)?;
                if let Some(dx) = grads.input {
                    out.push((*x, dx));
                }
                if let Some(dw) = grads.kernel {
                    out.push((*w, dw));
                }
                if let (Some(b), Some(db)) = (b, grads.bias) {
                    let shape = self.val(*b).shape();
                    out.push((*b, Tensor::from_vec(shape, db)?));
                }
            }
            Op::BatchNormTrain { x, scale, shift, stats } => {
                let (dx, ds, db) = norm::train_backward(stats, self.val(*scale).data(), g);
                out.push((*x, dx));
                out.push((*scale, Tensor::from_vec(self.val(*scale).shape(), ds)?));
                out.push((*shift, Tensor::from_vec(self.val(*shift).shape(), db)?));
            }
            Op::BatchNormInfer { x, scale, shift, mean, var } => {
                let (dx, ds, db) = norm::infer_backward(self.val(*x), self.val(*scale).data(), mean, var, g);
                out.push((*x, dx));
                out.push((*scale, Tensor::from_vec(self.val(*scale).shape(), ds)?));
                out.push((*shift, Tensor::from_vec(self.val(*shift).shape(), db)?));
            }
            Op::Relu(x) => out.push((*x, relu_backward(self.val(*x), g))),
            Op::Softmax(x) => out.push((*x, softmax_backward(&node.value, g))),
            Op::Upsample2x(x) => out.push((*x, upsample_replicate2x_backward(g))),
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                out.push((*a, g.zip_map(self.val(*b), "mul", |gv, bv| gv * bv)?));
                out.push((*b, g.zip_map(self.val(*a), "mul", |gv, av| gv * av)?));
            }
            Op::Div(a, b) => {
                let bv = self.val(*b);
                out.push((*a, g.zip_map(bv, "div", |gv, d| gv / d)?));
                let mut db = g.zip_map(&node.value, "div", |gv, y| gv * y)?;
                for (d, &den) in db.data_mut().iter_mut().zip(bv.data()) {
                    *d = -*d / den;
                }
                out.push((*b, db));
            }
            Op::Scale(a, k) => {
                let k = *k;
                out.push((*a, g.map(|v| v * k)));
            }
            Op::AddScalar(a) => out.push((*a, g.clone())),
            Op::Square(a) => {
                let two = T::of(2.0);
                out.push((*a, g.zip_map(self.val(*a), "square", |gv, x| two * x * gv)?));
            }
            Op::Hypot(a, b) => {
                let r = &node.value;
                let mut da = Tensor::zeros(r.shape());
                let mut db = Tensor::zeros(r.shape());
                for i in 0..r.len() {
                    let m = r.data()[i];
                    if m > T::zero() {
                        da.data_mut()[i] = g.data()[i] * self.val(*a).data()[i] / m;
                        db.data_mut()[i] = g.data()[i] * self.val(*b).data()[i] / m;
                    }
                }
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Sobel(a, dir) => out.push((*a, sobel_backward(g, *dir))),
            Op::Channel(a, c) => {
                let src = self.val(*a).shape();
                let mut da = Tensor::zeros(src);
                for n in 0..src.n() {
                    da.plane_mut(n, *c).copy_from_slice(g.plane(n, 0));
                }
                out.push((*a, da));
            }
            Op::SumAll(a) => out.push((*a, Tensor::full(self.val(*a).shape(), g.data()[0]))),
            Op::MeanAll(a) => {
                let s = self.val(*a).shape();
                let k = g.data()[0] / T::of(s.numel().max(1) as f64);
                out.push((*a, Tensor::full(s, k)));
            }
            Op::SumPerSample(a) => {
                let s = self.val(*a).shape();
                let mut da = Tensor::zeros(s);
                for n in 0..s.n() {
                    let gv = g.data()[n];
                    da.sample_mut(n).iter_mut().for_each(|v| *v = gv);
                }
                out.push((*a, da));
            }
            Op::SafeDiv { num, den, threshold } => {
                let dv = self.val(*den);
                let mut dn = Tensor::zeros(dv.shape());
                let mut dd = Tensor::zeros(dv.shape());
                for i in 0..dv.len() {
                    let d = dv.data()[i];
                    if d >= *threshold {
                        dn.data_mut()[i] = g.data()[i] / d;
                        dd.data_mut()[i] = -g.data()[i] * node.value.data()[i] / d;
                    }
                }
                out.push((*num, dn));
                out.push((*den, dd));
            }
            Op::Bce { p, target } => {
                let pv = self.val(*p);
                let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
                let k = g.data()[0] / T::of(pv.len().max(1) as f64);
                let mut dp = Tensor::zeros(pv.shape());
                for ((d, &pp), &t) in dp.data_mut().iter_mut().zip(pv.data()).zip(target.data()) {
                    if pp > lo && pp < hi {
                        *d = k * (-t / pp + (T::one() - t) / (T::one() - pp));
                    }
                }
                out.push((*p, dp));
            }
        }
        Ok(out)
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T: Scalar = f32> {
    graph: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; errors when `v` is foreign or was never reached.
    pub fn get(&self, v: Var) -> Result<&Tensor<T>> {
        if v.graph != self.graph || v.idx >= self.grads.len() {
            return Err(Error::Graph(format!("variable {v:?} is not part of the differentiated graph")));
        }
        self.grads[v.idx]
            .as_ref()
            .ok_or_else(|| Error::Graph(format!("variable {v:?} is detached from the loss (no gradient recorded)")))
    }

    pub fn take(&mut self, v: Var) -> Result<Tensor<T>> {
        self.get(v)?;
        Ok(self.grads[v.idx].take().expect("checked above"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn relu_derivative() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![2.0, -1.0]).unwrap());
        let y = g.relu(x).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn no_grad_graph_refuses_backward() {
        let mut g = Graph::<f32>::no_grad();
        let x = g.param(Tensor::scalar(1.0));
        let l = g.square(x).unwrap();
        assert!(!g.requires_grad(l));
        assert!(matches!(g.backward(l), Err(Error::Graph(_))));
    }

    #[test]
    fn foreign_and_detached_vars_error() {
        let mut a = Graph::<f32>::new();
        let mut b = Graph::<f32>::new();
        let xa = a.param(Tensor::scalar(1.0));
        let xb = b.param(Tensor::scalar(1.0));
        assert!(a.square(xb).is_err());
        let unused = a.param(Tensor::scalar(3.0));
        let l = a.square(xa).unwrap();
        let grads = a.backward(l).unwrap();
        assert_eq!(grads.get(xa).unwrap().data(), &[2.0]);
        assert!(grads.get(unused).is_err());
        assert!(grads.get(xb).is_err());
    }

    #[test]
    fn non_scalar_or_non_finite_loss_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        assert!(g.backward(x).is_err());
        let z = g.param(Tensor::scalar(0.0));
        let r = g.div(z, z).unwrap();
        assert!(g.backward(r).is_err());
    }

    #[test]
    fn bce_values() {
        let mut g = Graph::<f64>::new();
        let s = Shape::new(1, 1, 2, 2);
        let target = Tensor::from_vec(s, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let half = g.param(Tensor::full(s, 0.5));
        let l = g.bce(half, &target).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = g.param(target.clone());
        let l = g.bce(perfect, &target).unwrap();
        assert!(g.scalar(l) <= 1e-6);
    }

    #[test]
    fn bce_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = Shape::new(1, 1, 4, 4);
        let p: Vec<f64> = (0..16).map(|_| rng.gen_range(0.01..0.99)).collect();
        let t: Vec<f64> = (0..16).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let mut oracle = 0.0;
        for i in 0..16 {
            oracle += -(t[i] * p[i].ln() + (1.0 - t[i]) * (1.0 - p[i]).ln());
        }
        oracle /= 16.0;
        let mut g = Graph::<f32>::new();
        let pv = g.param(Tensor::from_f64s(s, &p).unwrap());
        let l = g.bce(pv, &Tensor::from_f64s(s, &t).unwrap()).unwrap();
        assert!((g.scalar(l) as f64 - oracle).abs() < 1e-6);
    }

    #[test]
    fn linearity_of_conv_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::<f64>::new();
        let x = g.constant(rand_tensor(Shape::new(1, 2, 5, 5), &mut rng));
        let y = g.constant(rand_tensor(Shape::new(1, 2, 5, 5), &mut rng));
        let w = g.param(rand_tensor(Shape::new(3, 2, 3, 3), &mut rng));
        let ax = g.scale(x, 0.7).unwrap();
        let by = g.scale(y, -1.3).unwrap();
        let mix = g.add(ax, by).unwrap();
        let lhs = g.conv2d(mix, w, None, ConvConfig::default()).unwrap();
        let cx = g.conv2d(x, w, None, ConvConfig::default()).unwrap();
        let cy = g.conv2d(y, w, None, ConvConfig::default()).unwrap();
        let cx = g.scale(cx, 0.7).unwrap();
        let cy = g.scale(cy, -1.3).unwrap();
        let rhs = g.add(cx, cy).unwrap();
        for (a, b) in g.value(lhs).data().iter().zip(g.value(rhs).data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
