//! The two fully convolutional MobileNet variants.
//!
//! A [`Model`] is a small layer DAG (convolutions, normalization, ReLU,
//! replicate upsampling, additive merges, softmax) plus a flat parameter
//! list. Shapes, MAC counts and receptive fields are all derived from the
//! DAG, so the audits in the tests never run a forward pass.

mod build;
pub mod checkpoint;
pub mod spec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::conv::{conv_macs, ConvConfig};
use crate::ops::norm::{NormMode, BN_MOMENTUM};
use crate::tensor::{Scalar, Shape, Tensor};

pub use build::{build, build_hairmattenet, build_hairsegnet, MOBILENET_BLOCKS, STEM_CHANNELS};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
pub use spec::{ModelSpec, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    /// Dense 3×3 stem convolution.
    Standard,
    Depthwise,
    Pointwise,
    /// 1×1 convolution matching an encoder feature map to a decoder depth.
    SkipAdapter,
    /// Final 1×1 convolution producing class logits.
    Classifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Kernel(ConvKind),
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_trainable(&self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Kernels that carry the L2 penalty: dense and 1×1 convolutions except
    /// the classifier. Depthwise kernels, biases and norm parameters are free.
    pub fn is_regularized(&self) -> bool {
        matches!(self, ParamKind::Kernel(ConvKind::Standard | ConvKind::Pointwise | ConvKind::SkipAdapter))
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Scalar = f32> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Input,
    /// Stem is block 0; depthwise-separable blocks are 1..=13.
    Encoder(usize),
    Decoder(usize),
    Skip(usize),
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: Option<usize>,
    pub config: ConvConfig,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub kind: ConvKind,
}

#[derive(Clone, Debug)]
pub struct NormLayer {
    pub scale: usize,
    pub shift: usize,
    pub mean: usize,
    pub var: usize,
}

#[derive(Clone, Debug)]
pub enum LayerOp {
    Input,
    Conv(ConvLayer),
    Norm(NormLayer),
    Relu,
    Upsample2x,
    Add,
    Softmax,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
    pub inputs: Vec<usize>,
    pub stage: Stage,
    pub out: FeatureShape,
}

/// One encoder→decoder connection: `source` feeds a 1×1 `adapter` whose
/// output is added into the decoder at `merge`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipEdge {
    pub source: usize,
    pub adapter: usize,
    pub merge: usize,
    pub resolution: usize,
    pub depth: usize,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    spec: ModelSpec,
    layers: Vec<Layer>,
    params: Vec<Param<T>>,
    bottleneck: usize,
    skips: Vec<SkipEdge>,
}

/// Running-statistic targets produced by one train-mode forward pass.
#[derive(Clone, Debug)]
pub struct NormUpdate<T> {
    pub mean_param: usize,
    pub var_param: usize,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

pub struct ForwardPass<T> {
    /// Softmax output, `(n, num_classes, s, s)`.
    pub probs: Var,
    pub logits: Var,
    /// Graph leaf per parameter; `None` for running statistics.
    pub params: Vec<Option<Var>>,
    pub norm_updates: Vec<NormUpdate<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn skip_edges(&self) -> &[SkipEdge] {
        &self.skips
    }

    /// Encoder output feeding the decoder.
    pub fn bottleneck(&self) -> &Layer {
        &self.layers[self.bottleneck]
    }

    /// Stored floats, running statistics included.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind.is_trainable()).map(|p| p.value.len()).sum()
    }

    /// Parameter memory at 32-bit precision.
    pub fn param_bytes(&self) -> usize {
        self.param_count() * 4
    }

    /// Multiply-accumulates of one forward pass on a single image.
    pub fn macs(&self) -> u64 {
        self.layers
            .iter()
            .filter_map(|l| match &l.op {
                LayerOp::Conv(c) => Some(conv_macs(c.in_c, c.out_c, c.kernel, c.config.groups, l.out.h, l.out.w)),
                _ => None,
            })
            .sum()
    }

    /// Receptive field (input pixels) of one bottleneck activation.
    pub fn encoder_receptive_field(&self) -> usize {
        let (mut field, mut jump) = (1, 1);
        for layer in &self.layers[..=self.bottleneck] {
            if let LayerOp::Conv(c) = &layer.op {
                field += (c.kernel - 1) * c.config.dilation * jump;
                jump *= c.config.stride;
            }
        }
        field
    }

    /// `(name, stage, shape)` of every layer output, in evaluation order.
    pub fn shape_trace(&self) -> Vec<(&str, Stage, FeatureShape)> {
        self.layers.iter().map(|l| (l.name.as_str(), l.stage, l.out)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), kind: p.kind, value: p.value.cast() })
                .collect(),
            bottleneck: self.bottleneck,
            skips: self.skips.clone(),
        }
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        let s = self.spec.input_size;
        let want = Shape::new(shape.n(), 3, s, s);
        for (axis, name) in [(1, "channel"), (2, "height"), (3, "width")] {
            if shape.0[axis] != want.0[axis] {
                return Err(Error::Dimension { op: "forward", axis: name, expected: want.0[axis], got: shape.0[axis] });
            }
        }
        Ok(())
    }

    /// Records the network on `g`. In [`NormMode::Train`] the pass returns
    /// running-statistic updates for [`apply_norm_updates`](Self::apply_norm_updates).
    pub fn forward_graph(&self, g: &mut Graph<T>, input: Var, mode: NormMode) -> Result<ForwardPass<T>> {
        self.check_input(g.value(input).shape())?;
        let params: Vec<Option<Var>> = self
            .params
            .iter()
            .map(|p| p.kind.is_trainable().then(|| g.param(p.value.clone())))
            .collect();
        let pv = |i: usize| params[i].expect("trainable parameter");
        let mut out: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut norm_updates = Vec::new();
        for layer in &self.layers {
            let x = layer.inputs.first().map(|&i| out[i]);
            let v = match &layer.op {
                LayerOp::Input => input,
                LayerOp::Conv(c) => g.conv2d(x.unwrap(), pv(c.weight), c.bias.map(pv), c.config)?,
                LayerOp::Norm(n) => match mode {
                    NormMode::Train => {
                        let (v, mean, var) = g.batch_norm_train(x.unwrap(), pv(n.scale), pv(n.shift))?;
                        norm_updates.push(NormUpdate { mean_param: n.mean, var_param: n.var, batch_mean: mean, batch_var: var });
                        v
                    }
                    NormMode::Infer => g.batch_norm_infer(
                        x.unwrap(),
                        pv(n.scale),
                        pv(n.shift),
                        self.params[n.mean].value.data(),
                        self.params[n.var].value.data(),
                    )?,
                },
                LayerOp::Relu => g.relu(x.unwrap())?,
                LayerOp::Upsample2x => g.upsample2x(x.unwrap())?,
                LayerOp::Add => g.add(out[layer.inputs[0]], out[layer.inputs[1]])?,
                LayerOp::Softmax => g.softmax_channels(x.unwrap())?,
            };
            out.push(v);
        }
        let probs = *out.last().expect("non-empty model");
        let logits = out[self.layers.len() - 2];
        Ok(ForwardPass { probs, logits, params, norm_updates })
    }

    /// Inference: per-pixel class probabilities for a `(n, 3, s, s)` batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::no_grad();
        let x = g.constant(batch.clone());
        let pass = self.forward_graph(&mut g, x, NormMode::Infer)?;
        Ok(g.value(pass.probs).clone())
    }

    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate<T>]) {
        let m = T::of(BN_MOMENTUM);
        for u in updates {
            for (param, batch) in [(u.mean_param, &u.batch_mean), (u.var_param, &u.batch_var)] {
                for (r, &b) in self.params[param].value.data_mut().iter_mut().zip(batch) {
                    *r = (T::one() - m) * *r + m * b;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> Model {
        let spec = ModelSpec::new(variant).with_input_size(32).with_width(0.125).with_decoder_depth(16);
        build(&spec, 1).unwrap()
    }

    #[test]
    fn zero_input_gives_distributions() {
        for v in [Variant::HairSegNet, Variant::HairMatteNet] {
            let m = tiny(v);
            let y = m.forward(&Tensor::zeros(Shape::new(1, 3, 32, 32))).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 2, 32, 32));
            assert!(y.all_finite());
            for i in 0..32 * 32 {
                assert!((y.plane(0, 0)[i] + y.plane(0, 1)[i] - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn wrong_input_size_is_a_dimension_error() {
        let m = tiny(Variant::HairMatteNet);
        let err = m.forward(&Tensor::zeros(Shape::new(1, 3, 64, 32))).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "height", expected: 32, got: 64, .. }), "{err}");
        assert!(m.forward(&Tensor::zeros(Shape::new(1, 1, 32, 32))).is_err());
    }

    #[test]
    fn identical_images_give_identical_maps() {
        let m = tiny(Variant::HairSegNet);
        let mut img = Tensor::<f32>::zeros(Shape::new(1, 3, 32, 32));
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i % 97) as f32 / 97.0).sqrt();
        }
        let y = m.forward(&Tensor::stack(&[&img, &img]).unwrap()).unwrap();
        assert_eq!(y.sample(0), y.sample(1));
    }

    #[test]
    fn flipped_input_still_valid_distribution() {
        let m = tiny(Variant::HairMatteNet);
        let mut img = Tensor::<f32>::zeros(Shape::new(1, 3, 32, 32));
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i as f32 * 0.37).sin() * 0.5 + 0.5;
        }
        let a = m.forward(&img).unwrap();
        let b = m.forward(&img.flip_horizontal()).unwrap().flip_horizontal();
        for y in [&a, &b] {
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn norm_updates_move_running_stats() {
        let mut m = tiny(Variant::HairSegNet);
        let mut g = Graph::new();
        let mut img = Tensor::<f32>::zeros(Shape::new(2, 3, 32, 32));
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i as f32 * 0.11).cos();
        }
        let x = g.constant(img);
        let pass = m.forward_graph(&mut g, x, NormMode::Train).unwrap();
        assert!(!pass.norm_updates.is_empty());
        let before = m.params()[pass.norm_updates[0].mean_param].value.clone();
        m.apply_norm_updates(&pass.norm_updates);
        assert_ne!(m.params()[pass.norm_updates[0].mean_param].value, before);
    }
}
