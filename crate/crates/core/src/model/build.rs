use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    ConvKind, ConvLayer, FeatureShape, Layer, LayerOp, Model, ModelSpec, NormLayer, Param, ParamKind, SkipEdge, Stage,
    Variant,
};
use crate::error::{Error, Result};
use crate::ops::conv::{output_extent, ConvConfig};
use crate::tensor::{Scalar, Shape, Tensor};

pub const STEM_CHANNELS: usize = 32;

/// `(stride, output channels)` of the 13 depthwise-separable encoder blocks.
pub const MOBILENET_BLOCKS: [(usize, usize); 13] = [
    (1, 64),
    (2, 128),
    (1, 128),
    (2, 256),
    (1, 256),
    (2, 512),
    (1, 512),
    (1, 512),
    (1, 512),
    (1, 512),
    (1, 512),
    (2, 1024),
    (1, 1024),
];

struct Builder<T: Scalar> {
    spec: ModelSpec,
    layers: Vec<Layer>,
    params: Vec<Param<T>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<T> {
    fn push(&mut self, name: String, op: LayerOp, inputs: Vec<usize>, stage: Stage, out: FeatureShape) -> usize {
        self.layers.push(Layer { name, op, inputs, stage, out });
        self.layers.len() - 1
    }

    fn param(&mut self, name: String, kind: ParamKind, value: Tensor<T>) -> usize {
        self.params.push(Param { name, kind, value });
        self.params.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        from: usize,
        name: &str,
        stage: Stage,
        kind: ConvKind,
        out_c: usize,
        kernel: usize,
        config: ConvConfig,
        bias: bool,
    ) -> Result<usize> {
        let input = self.layers[from].out;
        let (oh, _) = output_extent(input.h, kernel, &config)
            .ok_or_else(|| Error::InvalidSpec(format!("{name}: kernel does not fit a {}px map", input.h)))?;
        let (ow, _) = output_extent(input.w, kernel, &config)
            .ok_or_else(|| Error::InvalidSpec(format!("{name}: kernel does not fit a {}px map", input.w)))?;
        let per_group = input.c / config.groups;
        let fan_in = (per_group * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let shape = Shape::new(out_c, per_group, kernel, kernel);
        let data = (0..shape.numel()).map(|_| T::of(self.rng.gen_range(-bound..bound))).collect();
        let weight = self.param(format!("{name}.weight"), ParamKind::Kernel(kind), Tensor::from_vec(shape, data)?);
        let bias = bias.then(|| self.param(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(Shape::new(out_c, 1, 1, 1))));
        let layer = ConvLayer { weight, bias, config, in_c: input.c, out_c, kernel, kind };
        Ok(self.push(name.to_string(), LayerOp::Conv(layer), vec![from], stage, FeatureShape { c: out_c, h: oh, w: ow }))
    }

    fn norm(&mut self, from: usize, name: &str, stage: Stage) -> usize {
        let out = self.layers[from].out;
        let shape = Shape::new(out.c, 1, 1, 1);
        let norm = NormLayer {
            scale: self.param(format!("{name}.scale"), ParamKind::NormScale, Tensor::full(shape, T::one())),
            shift: self.param(format!("{name}.shift"), ParamKind::NormShift, Tensor::zeros(shape)),
            mean: self.param(format!("{name}.running_mean"), ParamKind::RunningMean, Tensor::zeros(shape)),
            var: self.param(format!("{name}.running_var"), ParamKind::RunningVar, Tensor::full(shape, T::one())),
        };
        self.push(name.to_string(), LayerOp::Norm(norm), vec![from], stage, out)
    }

    fn unary(&mut self, from: usize, name: String, op: LayerOp, stage: Stage) -> usize {
        let mut out = self.layers[from].out;
        if matches!(op, LayerOp::Upsample2x) {
            out.h *= 2;
            out.w *= 2;
        }
        self.push(name, op, vec![from], stage, out)
    }

    /// Convolution, optional normalization, optional ReLU.
    #[allow(clippy::too_many_arguments)]
    fn unit(
        &mut self,
        from: usize,
        name: &str,
        stage: Stage,
        kind: ConvKind,
        out_c: usize,
        kernel: usize,
        config: ConvConfig,
        relu: bool,
    ) -> Result<usize> {
        let bn = self.spec.use_batchnorm;
        let mut cur = self.conv(from, name, stage, kind, out_c, kernel, config, !bn)?;
        if bn {
            cur = self.norm(cur, &format!("{name}.bn"), stage);
        }
        if relu {
            cur = self.unary(cur, format!("{name}.relu"), LayerOp::Relu, stage);
        }
        Ok(cur)
    }

    /// Depthwise 3×3 then pointwise 1×1.
    #[allow(clippy::too_many_arguments)]
    fn separable(&mut self, from: usize, prefix: &str, stage: Stage, out_c: usize, stride: usize, dilation: usize, dw_relu: bool) -> Result<usize> {
        let in_c = self.layers[from].out.c;
        let dw_cfg = ConvConfig::default().stride(stride).dilation(dilation).groups(in_c);
        let dw = self.unit(from, &format!("{prefix}.dw"), stage, ConvKind::Depthwise, in_c, 3, dw_cfg, dw_relu)?;
        self.unit(dw, &format!("{prefix}.pw"), stage, ConvKind::Pointwise, out_c, 1, ConvConfig::default(), true)
    }
}

/// Encoder strides after surgery: `converted` blocks run at stride 1 and
/// every later depthwise kernel dilates to keep its original receptive field.
fn encoder_plan(converted: usize) -> Vec<(usize, usize)> {
    let downsampling: Vec<usize> = (0..MOBILENET_BLOCKS.len()).filter(|&i| MOBILENET_BLOCKS[i].0 == 2).collect();
    let removed = &downsampling[downsampling.len() - converted..];
    let (mut original, mut actual) = (2, 2);
    MOBILENET_BLOCKS
        .iter()
        .enumerate()
        .map(|(i, &(stride, _))| {
            let dilation = original / actual;
            let kept = if removed.contains(&i) { 1 } else { stride };
            original *= stride;
            actual *= kept;
            (kept, dilation)
        })
        .collect()
}

struct Encoder {
    bottleneck: usize,
    /// Deepest encoder output at each spatial side length.
    by_resolution: BTreeMap<usize, usize>,
}

fn encoder<T: Scalar>(b: &mut Builder<T>, input: usize, converted: usize) -> Result<Encoder> {
    let mut by_resolution = BTreeMap::new();
    let stem_cfg = ConvConfig::default().stride(2);
    let stem_c = b.spec.scaled(STEM_CHANNELS);
    let mut cur = b.unit(input, "enc.b00.conv", Stage::Encoder(0), ConvKind::Standard, stem_c, 3, stem_cfg, true)?;
    by_resolution.insert(b.layers[cur].out.h, cur);
    for (i, ((stride, dilation), &(_, out_c))) in encoder_plan(converted).into_iter().zip(&MOBILENET_BLOCKS).enumerate() {
        let block = i + 1;
        let out_c = b.spec.scaled(out_c);
        cur = b.separable(cur, &format!("enc.b{block:02}"), Stage::Encoder(block), out_c, stride, dilation, true)?;
        by_resolution.insert(b.layers[cur].out.h, cur);
    }
    Ok(Encoder { bottleneck: cur, by_resolution })
}

/// Upsample, optional additive skip, then depthwise + pointwise to `depth`.
fn decoder_stage<T: Scalar>(
    b: &mut Builder<T>,
    from: usize,
    stage: usize,
    depth: usize,
    skip_source: Option<usize>,
    skips: &mut Vec<SkipEdge>,
) -> Result<usize> {
    let prefix = format!("dec.s{stage}");
    let mut cur = b.unary(from, format!("{prefix}.up"), LayerOp::Upsample2x, Stage::Decoder(stage));
    if let Some(source) = skip_source {
        let target = b.layers[cur].out;
        let adapter =
            b.conv(source, &format!("skip.s{stage}"), Stage::Skip(stage), ConvKind::SkipAdapter, target.c, 1, ConvConfig::default(), true)?;
        if b.layers[adapter].out != target {
            return Err(Error::InvalidSpec(format!(
                "skip into decoder stage {stage}: {:?} does not match {:?}",
                b.layers[adapter].out, target
            )));
        }
        let merge = b.push(format!("{prefix}.merge"), LayerOp::Add, vec![cur, adapter], Stage::Decoder(stage), target);
        skips.push(SkipEdge { source, adapter, merge, resolution: target.h, depth: target.c });
        cur = merge;
    }
    // The depthwise half of a decoder block has no activation of its own.
    b.separable(cur, &prefix, Stage::Decoder(stage), depth, 1, 1, false)
}

fn head<T: Scalar>(b: &mut Builder<T>, from: usize) -> Result<usize> {
    let classes = b.spec.num_classes;
    let logits = b.conv(from, "head.classifier", Stage::Head, ConvKind::Classifier, classes, 1, ConvConfig::default(), true)?;
    Ok(b.unary(logits, "head.softmax".into(), LayerOp::Softmax, Stage::Head))
}

fn start<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<(Builder<T>, usize)> {
    spec.validate()?;
    let mut b = Builder { spec: spec.clone(), layers: Vec::new(), params: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
    let s = spec.input_size;
    let input = b.push("input".into(), LayerOp::Input, vec![], Stage::Input, FeatureShape { c: 3, h: s, w: s });
    Ok((b, input))
}

/// Dilated encoder ending at 1/8 resolution and a three-stage decoder.
pub fn build_hairsegnet<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let spec = ModelSpec { variant: Variant::HairSegNet, ..spec.clone() };
    let (mut b, input) = start::<T>(&spec, seed)?;
    let enc = encoder(&mut b, input, 2)?;
    let mut cur = enc.bottleneck;
    let mut skips = Vec::new();
    for stage in 1..=3 {
        cur = decoder_stage(&mut b, cur, stage, spec.decoder_depth, None, &mut skips)?;
    }
    head(&mut b, cur)?;
    Ok(Model { spec, layers: b.layers, params: b.params, bottleneck: enc.bottleneck, skips })
}

/// Full-stride encoder, five-stage decoder, additive skips at 1/16 to 1/2.
pub fn build_hairmattenet<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    let spec = ModelSpec { variant: Variant::HairMatteNet, ..spec.clone() };
    let (mut b, input) = start::<T>(&spec, seed)?;
    let enc = encoder(&mut b, input, 0)?;
    let mut cur = enc.bottleneck;
    let mut skips = Vec::new();
    for stage in 1..=5 {
        let resolution = spec.input_size >> (5 - stage);
        let source = (stage < 5).then(|| enc.by_resolution.get(&resolution).copied()).flatten();
        cur = decoder_stage(&mut b, cur, stage, spec.decoder_depth, source, &mut skips)?;
    }
    head(&mut b, cur)?;
    Ok(Model { spec, layers: b.layers, params: b.params, bottleneck: enc.bottleneck, skips })
}

pub fn build<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    match spec.variant {
        Variant::HairSegNet => build_hairsegnet(spec, seed),
        Variant::HairMatteNet => build_hairmattenet(spec, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surgery_plan() {
        let plan = encoder_plan(2);
        let strides: Vec<usize> = plan.iter().map(|p| p.0).collect();
        let dilations: Vec<usize> = plan.iter().map(|p| p.1).collect();
        assert_eq!(strides, [1, 2, 1, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(dilations, [1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 4]);
        assert!(encoder_plan(0).iter().all(|p| p.1 == 1));
    }

    #[test]
    fn bottleneck_resolutions() {
        let seg: Model = build_hairsegnet(&ModelSpec::hairsegnet(), 0).unwrap();
        assert_eq!(seg.bottleneck().out, FeatureShape { c: 1024, h: 28, w: 28 });
        let matte: Model = build_hairmattenet(&ModelSpec::hairmattenet(), 0).unwrap();
        assert_eq!(matte.bottleneck().out, FeatureShape { c: 1024, h: 7, w: 7 });
    }

    #[test]
    fn matte_skips() {
        let m: Model = build_hairmattenet(&ModelSpec::hairmattenet(), 0).unwrap();
        let edges: Vec<(usize, usize)> = m.skip_edges().iter().map(|e| (e.resolution, e.depth)).collect();
        assert_eq!(edges, [(14, 1024), (28, 64), (56, 64), (112, 64)]);
        let names: Vec<&str> = m.skip_edges().iter().map(|e| m.layers()[e.source].name.as_str()).collect();
        assert_eq!(names, ["enc.b11.pw.relu", "enc.b05.pw.relu", "enc.b03.pw.relu", "enc.b01.pw.relu"]);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let spec = ModelSpec::hairmattenet().with_width(0.25).with_input_size(64);
        let a: Model = build(&spec, 7).unwrap();
        let b: Model = build(&spec, 7).unwrap();
        let c: Model = build(&spec, 8).unwrap();
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.value == y.value));
        assert!(a.params().iter().zip(c.params()).any(|(x, y)| x.value != y.value));
    }

    #[test]
    fn no_batchnorm_gives_biases() {
        let spec = ModelSpec::hairsegnet().with_batchnorm(false).with_width(0.25).with_input_size(64);
        let m: Model = build(&spec, 0).unwrap();
        assert!(m.layers().iter().all(|l| !matches!(l.op, LayerOp::Norm(_))));
        assert!(m.layers().iter().all(|l| !matches!(&l.op, LayerOp::Conv(c) if c.bias.is_none())));
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(build::<f32>(&ModelSpec::hairsegnet().with_input_size(100), 0).is_err());
    }
}
