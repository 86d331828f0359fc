//! Procedural hair-strand images with exact masks.
//!
//! Each sample is a background plus a clump of quadratic Bézier strands
//! rasterized with analytic anti-aliasing. The mask is the set of pixels at
//! least half covered, so it shares geometry with the rendered strands.
//! Sample `i` depends only on `(seed, i)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Background {
    Flat,
    /// Linear two-colour ramp in a random direction.
    Gradient,
    /// Flat base with sinusoidal texture and hard-edged patches.
    Textured,
    /// One of the above, drawn per sample.
    Mixed,
}

/// Label noise: each mask is dilated or eroded (chosen per sample) by a disk
/// of radius `1..=radius`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseLabels {
    pub radius: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    /// Square canvas side in pixels.
    pub size: usize,
    /// Inclusive range of strands drawn per sample.
    pub strands: (usize, usize),
    /// Strand width range as a fraction of the canvas side.
    pub strand_width: (f64, f64),
    pub background: Background,
    /// Luminance range of the hair base colour.
    pub hair_albedo: (f64, f64),
    /// Chance that a strand is drawn lighter than its clump.
    pub highlight_prob: f64,
    /// Mask coverage band: strands that would push coverage above the upper
    /// bound are rejected; extra strands are tried while below the lower.
    pub coverage: (f64, f64),
    pub coarse: Option<CoarseLabels>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            count: 100,
            size: 64,
            strands: (10, 24),
            strand_width: (0.04, 0.09),
            background: Background::Mixed,
            hair_albedo: (0.05, 0.3),
            highlight_prob: 0.2,
            coverage: (0.08, 0.5),
            coarse: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Dataset(format!("synthetic config: {m}")));
        if self.size < 4 {
            return bad("canvas side must be at least 4");
        }
        if self.strands.0 > self.strands.1 {
            return bad("strand range is empty");
        }
        let unit = |r: (f64, f64)| 0.0 <= r.0 && r.0 <= r.1 && r.1 <= 1.0;
        if !unit(self.strand_width) || self.strand_width.1 == 0.0 {
            return bad("strand width range must lie in (0, 1]");
        }
        if !unit(self.hair_albedo) || !unit(self.coverage) {
            return bad("albedo and coverage ranges must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.highlight_prob) {
            return bad("highlight probability must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One rendered sample with both label variants.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: Tensor,
    pub exact_mask: Tensor,
    pub coarse_mask: Option<Tensor>,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let samples = (0..cfg.count)
        .map(|i| {
            let r = render_sample(cfg, i);
            Sample { image: r.image, mask: r.coarse_mask.unwrap_or(r.exact_mask), id: format!("synth{i:04}") }
        })
        .collect();
    Ok(Dataset { samples })
}

pub fn render_sample(cfg: &SynthConfig, index: usize) -> Rendered {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let s = cfg.size;
    let mut rgb = background(&mut rng, cfg.background, s);
    let mut coverage = vec![0.0f64; s * s];
    let mut covered = 0usize;

    let albedo = rng.gen_range(cfg.hair_albedo.0..=cfg.hair_albedo.1);
    let hair: [f64; 3] = std::array::from_fn(|_| (albedo * rng.gen_range(0.7..1.3)).clamp(0.0, 1.0));
    let root = (rng.gen_range(0.25..0.75) * s as f64, rng.gen_range(0.25..0.75) * s as f64);
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);

    let wanted = rng.gen_range(cfg.strands.0..=cfg.strands.1);
    let (lo, hi) = ((cfg.coverage.0 * (s * s) as f64).ceil() as usize, (cfg.coverage.1 * (s * s) as f64) as usize);
    let (mut drawn, mut attempts) = (0, 0);
    while wanted > 0 && attempts < 4 * wanted.max(8) && (drawn < wanted || covered < lo) {
        attempts += 1;
        let strand = Strand::random(&mut rng, cfg, root, heading);
        let highlight = rng.gen_bool(cfg.highlight_prob);
        let tone = rng.gen_range(0.85..1.15);
        let footprint = strand.footprint(s);
        let gained = footprint.iter().filter(|&&(i, c)| c >= 0.5 && coverage[i] < 0.5).count();
        if covered + gained > hi {
            continue;
        }
        for &(i, c) in &footprint {
            for (ch, plane) in rgb.iter_mut().enumerate() {
                let colour = (hair[ch] * tone + if highlight { 0.2 } else { 0.0 }).clamp(0.0, 1.0);
                plane[i] = plane[i] * (1.0 - c) + colour * c;
            }
            coverage[i] = coverage[i].max(c);
        }
        covered += gained;
        drawn += 1;
    }

    let exact: Vec<bool> = coverage.iter().map(|&c| c >= 0.5).collect();
    let coarse = cfg.coarse.filter(|c| c.radius > 0).map(|c| {
        let radius = rng.gen_range(1..=c.radius);
        morph(&exact, s, radius, rng.gen_bool(0.5))
    });
    let mask_tensor = |m: &[bool]| {
        Tensor::from_vec(Shape::new(1, 1, s, s), m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap()
    };
    let image_data = rgb.iter().flat_map(|p| p.iter().map(|&v| v.clamp(0.0, 1.0) as f32)).collect();
    Rendered {
        image: Tensor::from_vec(Shape::new(1, 3, s, s), image_data).unwrap(),
        exact_mask: mask_tensor(&exact),
        coarse_mask: coarse.as_deref().map(mask_tensor),
    }
}

fn background(rng: &mut ChaCha8Rng, mode: Background, s: usize) -> [Vec<f64>; 3] {
    let mode = match mode {
        Background::Mixed => [Background::Flat, Background::Gradient, Background::Textured][rng.gen_range(0..3)],
        m => m,
    };
    let colour = |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.gen_range(0.45..0.95)) };
    let base = colour(rng);
    let mut planes: [Vec<f64>; 3] = std::array::from_fn(|c| vec![base[c]; s * s]);
    match mode {
        Background::Flat | Background::Mixed => {}
        Background::Gradient => {
            let other = colour(rng);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (angle.cos(), angle.sin());
            for y in 0..s {
                for x in 0..s {
                    // Projection onto the ramp direction, mapped to [0, 1].
                    let u = (((x as f64 + 0.5) / s as f64 - 0.5) * dx + ((y as f64 + 0.5) / s as f64 - 0.5) * dy)
                        / std::f64::consts::SQRT_2
                        + 0.5;
                    for c in 0..3 {
                        planes[c][y * s + x] = base[c] * (1.0 - u) + other[c] * u;
                    }
                }
            }
        }
        Background::Textured => {
            let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.gen_range(1.0..6.0) * std::f64::consts::TAU / s as f64,
                        rng.gen_range(1.0..6.0) * std::f64::consts::TAU / s as f64,
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.03..0.08),
                    )
                })
                .collect();
            for y in 0..s {
                for x in 0..s {
                    let t: f64 = waves.iter().map(|&(fx, fy, ph, a)| a * (fx * x as f64 + fy * y as f64 + ph).sin()).sum();
                    for plane in planes.iter_mut() {
                        plane[y * s + x] += t;
                    }
                }
            }
            for _ in 0..rng.gen_range(1..4) {
                let patch = colour(rng);
                let (x0, y0) = (rng.gen_range(0..s), rng.gen_range(0..s));
                let (pw, ph) = (rng.gen_range(s / 8..=s / 3), rng.gen_range(s / 8..=s / 3));
                for y in y0..(y0 + ph).min(s) {
                    for x in x0..(x0 + pw).min(s) {
                        for c in 0..3 {
                            planes[c][y * s + x] = patch[c];
                        }
                    }
                }
            }
        }
    }
    planes
}

struct Strand {
    points: Vec<(f64, f64)>,
    half_width: f64,
}

impl Strand {
    const SEGMENTS: usize = 24;

    fn random(rng: &mut ChaCha8Rng, cfg: &SynthConfig, root: (f64, f64), heading: f64) -> Strand {
        let s = cfg.size as f64;
        let start = (root.0 + rng.gen_range(-0.2..0.2) * s, root.1 + rng.gen_range(-0.2..0.2) * s);
        let angle = heading + rng.gen_range(-0.6..0.6);
        let length = rng.gen_range(0.3..0.8) * s;
        let end = (start.0 + length * angle.cos(), start.1 + length * angle.sin());
        let bend = rng.gen_range(-0.3..0.3) * length;
        let control = ((start.0 + end.0) / 2.0 - bend * angle.sin(), (start.1 + end.1) / 2.0 + bend * angle.cos());
        let points = (0..=Self::SEGMENTS)
            .map(|i| {
                let t = i as f64 / Self::SEGMENTS as f64;
                let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
                (a * start.0 + b * control.0 + c * end.0, a * start.1 + b * control.1 + c * end.1)
            })
            .collect();
        let width = rng.gen_range(cfg.strand_width.0..=cfg.strand_width.1) * s;
        Strand { points, half_width: width / 2.0 }
    }

    /// `(pixel index, coverage)` for every touched pixel; coverage ramps
    /// linearly across the one-pixel band around the strand boundary.
    fn footprint(&self, s: usize) -> Vec<(usize, f64)> {
        let reach = self.half_width + 0.5;
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in &self.points {
            (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
        }
        let clip = |v: f64| v.clamp(0.0, s as f64) as usize;
        let mut out = Vec::new();
        for py in clip(y0 - reach)..clip(y1 + reach + 1.0) {
            for px in clip(x0 - reach)..clip(x1 + reach + 1.0) {
                let p = (px as f64 + 0.5, py as f64 + 0.5);
                let d = self.points.windows(2).map(|w| segment_distance(p, w[0], w[1])).fold(f64::MAX, f64::min);
                let c = (reach - d).clamp(0.0, 1.0);
                if c > 0.0 {
                    out.push((py * s + px, c));
                }
            }
        }
        out
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Binary dilation (`grow`) or erosion by a disk.
pub fn morph(mask: &[bool], s: usize, radius: usize, grow: bool) -> Vec<bool> {
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> =
        (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dy, dx))).filter(|(dy, dx)| dy * dy + dx * dx <= r * r).collect();
    (0..s * s)
        .map(|i| {
            let (y, x) = ((i / s) as isize, (i % s) as isize);
            let mut hits = offsets.iter().map(|&(dy, dx)| {
                let (yy, xx) = (y + dy, x + dx);
                // Outside the canvas counts as background.
                (0..s as isize).contains(&yy) && (0..s as isize).contains(&xx) && mask[yy as usize * s + xx as usize]
            });
            if grow {
                hits.any(|h| h)
            } else {
                hits.all(|h| h)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iou(a: &Tensor, b: &Tensor) -> f64 {
        let (mut inter, mut union) = (0.0, 0.0);
        for (&x, &y) in a.data().iter().zip(b.data()) {
            inter += (x * y) as f64;
            union += x.max(y) as f64;
        }
        if union == 0.0 {
            1.0
        } else {
            inter / union
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig { count: 4, ..Default::default() };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = generate_synthetic(&SynthConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(other, generate_synthetic(&cfg).unwrap());
        // Sample i does not depend on how many samples are generated.
        let longer = generate_synthetic(&SynthConfig { count: 6, ..cfg.clone() }).unwrap();
        assert_eq!(longer.samples[..4], generate_synthetic(&cfg).unwrap().samples[..]);
    }

    #[test]
    fn zero_strands_give_empty_masks() {
        let ds = generate_synthetic(&SynthConfig { count: 5, strands: (0, 0), ..Default::default() }).unwrap();
        assert!(ds.samples.iter().all(|s| s.mask.sum() == 0.0));
        ds.validate().unwrap();
    }

    #[test]
    fn samples_are_valid_and_coverage_is_banded() {
        let cfg = SynthConfig::default();
        let ds = generate_synthetic(&cfg).unwrap();
        ds.validate().unwrap();
        let coverage: Vec<f64> = ds.samples.iter().map(|s| s.mask.mean() as f64).collect();
        let mean = coverage.iter().sum::<f64>() / coverage.len() as f64;
        assert!(coverage.iter().all(|&c| c <= cfg.coverage.1), "{coverage:?}");
        assert!(mean >= cfg.coverage.0 && mean <= cfg.coverage.1, "mean coverage {mean}");
    }

    #[test]
    fn coarse_labels_are_measurably_noisy() {
        let cfg = SynthConfig { count: 20, coarse: Some(CoarseLabels { radius: 2 }), ..Default::default() };
        for i in 0..cfg.count {
            let r = render_sample(&cfg, i);
            let score = iou(&r.exact_mask, r.coarse_mask.as_ref().unwrap());
            assert!((0.1..1.0).contains(&score), "sample {i}: iou {score}");
        }
    }

    #[test]
    fn mask_follows_rendered_strands() {
        // Pixels inside the mask are mostly hair-dark; the image is a blend
        // towards the hair colour exactly where coverage is non-zero.
        let cfg = SynthConfig { background: Background::Flat, highlight_prob: 0.0, ..Default::default() };
        let r = render_sample(&cfg, 3);
        let lum = |i: usize| (0..3).map(|c| r.image.plane(0, c)[i]).sum::<f32>() / 3.0;
        let n = r.exact_mask.len();
        let inside: Vec<f32> = (0..n).filter(|&i| r.exact_mask.data()[i] == 1.0).map(lum).collect();
        let outside: Vec<f32> = (0..n).filter(|&i| r.exact_mask.data()[i] == 0.0).map(lum).collect();
        let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
        assert!(mean(&inside) + 0.2 < mean(&outside));
    }

    #[test]
    fn morphology() {
        let mut m = vec![false; 49];
        m[24] = true;
        let grown = morph(&m, 7, 1, true);
        assert_eq!(grown.iter().filter(|&&b| b).count(), 5);
        assert_eq!(morph(&grown, 7, 1, false).iter().filter(|&&b| b).count(), 1);
    }
}
