use std::collections::HashMap;

use hairmatte_core::model::{build, load_checkpoint, save_checkpoint, FeatureShape, Model, ModelSpec, Variant};
use hairmatte_core::{Shape, Tensor};

const WIDTHS: [f64; 3] = [1.0, 0.5, 0.125];
const SIZES: [usize; 3] = [64, 224, 480];

/// `(output channels, stride)` of the reference MobileNet body, written out
/// independently of the builder's tables.
const BODY: [(usize, usize); 13] =
    [(64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2), (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1)];

fn scale(c: usize, width: f64) -> usize {
    ((c as f64 * width).round() as usize).max(1)
}

/// Expected `(c, h, w)` of every encoder block, decoder stage and the output.
fn expected_table(variant: Variant, size: usize, width: f64, depth: usize) -> HashMap<String, (usize, usize, usize)> {
    let mut table = HashMap::new();
    let mut side = size / 2;
    table.insert("enc.b00.conv.relu".to_string(), (scale(32, width), side, side));
    for (i, &(c, stride)) in BODY.iter().enumerate() {
        // The segmentation encoder stops downsampling at 1/8.
        let keeps_stride = variant == Variant::HairMatteNet || size / side < 8;
        if stride == 2 && keeps_stride {
            side /= 2;
        }
        table.insert(format!("enc.b{:02}.pw.relu", i + 1), (scale(c, width), side, side));
    }
    let stages = if variant == Variant::HairMatteNet { 5 } else { 3 };
    for stage in 1..=stages {
        side *= 2;
        table.insert(format!("dec.s{stage}.pw.relu"), (depth, side, side));
    }
    table.insert("head.softmax".to_string(), (2, size, size));
    table
}

#[test]
fn shape_audit_over_widths_and_sizes() {
    for variant in [Variant::HairSegNet, Variant::HairMatteNet] {
        for width in WIDTHS {
            for size in SIZES {
                let spec = ModelSpec::new(variant).with_width(width).with_input_size(size);
                let model: Model = build(&spec, 0).unwrap();
                let trace: HashMap<&str, FeatureShape> = model.shape_trace().into_iter().map(|(n, _, s)| (n, s)).collect();
                let table = expected_table(variant, size, width, spec.decoder_depth);
                for (name, &(c, h, w)) in &table {
                    let got = trace.get(name.as_str()).unwrap_or_else(|| panic!("{variant} {width} {size}: no layer {name}"));
                    assert_eq!((got.c, got.h, got.w), (c, h, w), "{variant} width {width} size {size} layer {name}");
                }
                let bottleneck = model.bottleneck().out;
                let ratio = if variant == Variant::HairSegNet { 8 } else { 32 };
                assert_eq!((bottleneck.h, bottleneck.c), (size / ratio, scale(1024, width)));
            }
        }
    }
}

fn separable(cin: usize, cout: usize) -> usize {
    // depthwise 3×3 + BN, pointwise + BN; BN carries scale, shift, mean, var.
    9 * cin + 4 * cin + cin * cout + 4 * cout
}

fn expected_params(variant: Variant, width: f64, depth: usize, classes: usize) -> usize {
    let stem = scale(32, width);
    let mut total = 27 * stem + 4 * stem;
    let mut cin = stem;
    let mut outputs = vec![stem];
    for &(c, _) in &BODY {
        let cout = scale(c, width);
        total += separable(cin, cout);
        outputs.push(cout);
        cin = cout;
    }
    let stages = if variant == Variant::HairMatteNet { 5 } else { 3 };
    for stage in 1..=stages {
        if variant == Variant::HairMatteNet && stage < 5 {
            // Adapter from the deepest block at the merge resolution into
            // whatever the upsampled tensor carries there.
            let source = [outputs[11], outputs[5], outputs[3], outputs[1]][stage - 1];
            let target = if stage == 1 { cin } else { depth };
            total += source * target + target;
        }
        total += separable(if stage == 1 { cin } else { depth }, depth);
    }
    total + depth * classes + classes
}

#[test]
fn parameter_counts_match_layer_arithmetic() {
    for variant in [Variant::HairSegNet, Variant::HairMatteNet] {
        for width in [1.0, 0.25] {
            let spec = ModelSpec::new(variant).with_width(width);
            let model: Model = build(&spec, 0).unwrap();
            assert_eq!(model.param_count(), expected_params(variant, width, 64, 2), "{variant} width {width}");
        }
    }
    assert_eq!(expected_params(Variant::HairSegNet, 1.0, 64, 2), 3_318_466);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hmnc");
    let spec = ModelSpec::hairmattenet().with_width(0.25).with_input_size(64);
    let model: Model = build(&spec, 21).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.spec(), &spec);
    assert_eq!(loaded.param_count(), expected_params(Variant::HairMatteNet, 0.25, 64, 2));
    let data = (0..3 * 64 * 64).map(|i| ((i * 31) % 97) as f32 / 97.0).collect();
    let input = Tensor::from_vec(Shape::new(1, 3, 64, 64), data).unwrap();
    let (a, b) = (model.forward(&input).unwrap(), loaded.forward(&input).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn skip_edges_follow_the_encoder_resolutions() {
    let model: Model = build(&ModelSpec::hairmattenet(), 0).unwrap();
    let edges: Vec<(usize, usize, &str)> = model
        .skip_edges()
        .iter()
        .map(|e| (e.resolution, e.depth, model.layers()[e.source].name.as_str()))
        .collect();
    assert_eq!(
        edges,
        vec![
            (14, 1024, "enc.b11.pw.relu"),
            (28, 64, "enc.b05.pw.relu"),
            (56, 64, "enc.b03.pw.relu"),
            (112, 64, "enc.b01.pw.relu"),
        ]
    );
}

#[test]
fn dilated_encoder_keeps_the_receptive_field() {
    let seg: Model = build(&ModelSpec::hairsegnet(), 0).unwrap();
    let matte: Model = build(&ModelSpec::hairmattenet(), 0).unwrap();
    assert_eq!(seg.encoder_receptive_field(), matte.encoder_receptive_field());
    assert!(matte.macs() < seg.macs());
}
