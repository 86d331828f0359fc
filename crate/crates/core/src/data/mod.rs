//! Samples, datasets, preprocessing and on-disk layout.
//!
//! Inputs are assumed to be pre-cropped around the face; no detection or
//! cropping happens here.
//!
//! A dataset directory holds `images/NNNN.<ext>`, `masks/NNNN.<ext>` and a
//! `manifest.tsv` whose first line is `# hairmatte-dataset v1` and whose
//! remaining lines are `id<TAB>split<TAB>image path<TAB>mask path`, paths
//! relative to the directory.

pub mod io;
pub mod synth;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub use io::{load_image, save_image};
pub use synth::{generate_synthetic, Background, CoarseLabels, SynthConfig};

pub const MANIFEST: &str = "manifest.tsv";
pub const MANIFEST_HEADER: &str = "# hairmatte-dataset v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(1, 3, h, w)` in `[0, 1]`.
    pub image: Tensor,
    /// `(1, 1, h, w)` binary hair mask, or `(1, k, h, w)` one-hot labels.
    pub mask: Tensor,
    pub id: String,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let (i, m) = (self.image.shape(), self.mask.shape());
        let bad = |msg: String| Err(Error::Dataset(format!("sample {}: {msg}", self.id)));
        if i.n() != 1 || i.c() != 3 {
            return bad(format!("image shape {i} is not (1, 3, h, w)"));
        }
        if m.n() != 1 || (m.h(), m.w()) != (i.h(), i.w()) {
            return bad(format!("mask shape {m} does not match image shape {i}"));
        }
        if !self.image.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return bad("image values outside [0, 1]".into());
        }
        if !self.mask.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return bad("mask is not binary".into());
        }
        Ok(())
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape().h(), self.image.shape().w())
    }

    /// The binary hair channel as `(1, 1, h, w)`.
    pub fn hair_mask(&self, hair_index: usize) -> Result<Tensor> {
        if self.mask.shape().c() == 1 {
            Ok(self.mask.clone())
        } else {
            self.mask.channel(hair_index)
        }
    }

    /// Per-class training target `(1, classes, h, w)`. A single-channel mask
    /// expands to `hair` and `1 − hair` for two classes.
    pub fn target<T: Scalar>(&self, classes: usize, hair_index: usize) -> Result<Tensor<T>> {
        let c = self.mask.shape().c();
        if c == classes {
            return Ok(self.mask.cast());
        }
        if c != 1 || classes != 2 || hair_index > 1 {
            return Err(Error::Dataset(format!(
                "sample {}: a {c}-channel mask cannot form a {classes}-class target with hair class {hair_index}",
                self.id
            )));
        }
        let hair = self.mask.cast::<T>();
        let rest = hair.map(|v| T::one() - v);
        let parts = if hair_index == 1 { [&rest, &hair] } else { [&hair, &rest] };
        let (h, w) = self.size();
        let mut data = Vec::with_capacity(2 * h * w);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Tensor::from_vec(Shape::new(1, 2, h, w), data)
    }

    pub fn flipped(&self) -> Sample {
        Sample { image: self.image.flip_horizontal(), mask: self.mask.flip_horizontal(), id: format!("{}_flip", self.id) }
    }

    /// Bilinear image resize; the mask is resized the same way and
    /// re-binarized at 0.5.
    pub fn resized(&self, h: usize, w: usize) -> Result<Sample> {
        if self.size() == (h, w) {
            return Ok(self.clone());
        }
        let mask = resize_bilinear(&self.mask, h, w)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        Ok(Sample { image: resize_bilinear(&self.image, h, w)?, mask, id: self.id.clone() })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.samples.iter().try_for_each(Sample::validate)
    }

    /// Originals followed by their horizontal mirrors.
    pub fn flip_augment(&self) -> Dataset {
        let mut samples = self.samples.clone();
        samples.extend(self.samples.iter().map(Sample::flipped));
        Dataset { samples }
    }

    pub fn resized(&self, size: usize) -> Result<Dataset> {
        Ok(Dataset { samples: self.samples.iter().map(|s| s.resized(size, size)).collect::<Result<_>>()? })
    }

    /// Stacks `indices` into `(n, 3, h, w)` images and `(n, classes, h, w)` targets.
    pub fn batch<T: Scalar>(&self, indices: &[usize], classes: usize, hair_index: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let images: Vec<Tensor<T>> = indices.iter().map(|&i| self.samples[i].image.cast()).collect();
        let targets: Vec<Tensor<T>> =
            indices.iter().map(|&i| self.samples[i].target(classes, hair_index)).collect::<Result<_>>()?;
        Ok((Tensor::stack(&images.iter().collect::<Vec<_>>())?, Tensor::stack(&targets.iter().collect::<Vec<_>>())?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| Error::Dataset(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Dataset {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    /// Writes images as `.ppm` and single-channel masks as `.pgm`, numbered
    /// consecutively across splits.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("masks"))?;
        let mut manifest = format!("{MANIFEST_HEADER}\n");
        let mut n = 0;
        for split in Split::ALL {
            for s in &self.get(split).samples {
                if s.mask.shape().c() != 1 {
                    return Err(Error::Dataset(format!("sample {}: only single-channel masks can be written", s.id)));
                }
                let image = format!("images/{n:04}.ppm");
                let mask = format!("masks/{n:04}.pgm");
                save_image(dir.join(&image), &s.image)?;
                save_image(dir.join(&mask), &s.mask)?;
                manifest.push_str(&format!("{}\t{split}\t{image}\t{mask}\n", s.id));
                n += 1;
            }
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::Dataset(format!("{} does not start with {MANIFEST_HEADER:?}", path.display())));
        }
        let mut out = DatasetSplits::default();
        for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, split, image, mask] = fields[..] else {
                return Err(Error::Dataset(format!("manifest line {}: expected 4 tab-separated fields", no + 2)));
            };
            let mut image = load_image(dir.join(image))?;
            if image.shape().c() == 1 {
                let plane = image.data().to_vec();
                image = Tensor::from_vec(image.shape().with_c(3), plane.repeat(3))?;
            }
            let mask = load_image(dir.join(mask))?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
            let sample = Sample { image, mask, id: id.to_string() };
            sample.validate()?;
            out.get_mut(split.parse()?).samples.push(sample);
        }
        Ok(out)
    }
}

/// Bilinear resampling with half-pixel centres and clamped borders.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bilinear", format!("target {out_h}×{out_w} is empty")));
    }
    let s = input.shape();
    if (s.h(), s.w()) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                (lo, (lo + 1).min(inp - 1), src - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (taps(out_h, s.h()), taps(out_w, s.w()));
    let mut out = Tensor::zeros(Shape::new(s.n(), s.c(), out_h, out_w));
    for n in 0..s.n() {
        for c in 0..s.c() {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let at = |y: usize, x: usize| src[y * s.w() + x].as_f64();
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    dst[oy * out_w + ox] = T::of(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, w: usize) -> Sample {
        let mut image = Tensor::zeros(Shape::new(1, 3, 2, w));
        let mut mask = Tensor::zeros(Shape::new(1, 1, 2, w));
        for x in 0..w {
            image.set(0, 0, 0, x, x as f32 / w as f32);
            if x == 0 {
                mask.set(0, 0, 1, x, 1.0);
            }
        }
        Sample { image, mask, id: id.into() }
    }

    #[test]
    fn resize_identity_and_monotone() {
        let row = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap();
        assert_eq!(resize_bilinear(&row, 1, 2).unwrap(), row);
        let up = resize_bilinear(&row, 1, 4).unwrap();
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
        let flat = Tensor::<f32>::full(Shape::new(1, 3, 9, 7), 0.4);
        let back = resize_bilinear(&resize_bilinear(&flat, 3, 2).unwrap(), 9, 7).unwrap();
        assert!(back.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
        assert!(resize_bilinear(&row, 0, 3).is_err());
    }

    #[test]
    fn flip_augment_doubles_and_mirrors() {
        let ds = Dataset::new(vec![sample("a", 3), sample("b", 4), sample("c", 5)]);
        let aug = ds.flip_augment();
        assert_eq!(aug.len(), 6);
        assert_eq!(aug.samples[..3], ds.samples[..]);
        let flipped = &aug.samples[3];
        assert_eq!(flipped.mask.at(0, 0, 1, 2), 1.0);
        assert_eq!(flipped.flipped().image, ds.samples[0].image);
        assert_eq!(flipped.flipped().mask, ds.samples[0].mask);
    }

    #[test]
    fn two_class_target_channels() {
        let s = sample("a", 3);
        let t: Tensor<f32> = s.target(2, 1).unwrap();
        assert_eq!(t.channel(1).unwrap(), s.mask);
        assert_eq!(t.at(0, 0, 1, 0), 0.0);
        assert_eq!(t.at(0, 0, 0, 0), 1.0);
        assert!(s.target::<f32>(3, 1).is_err());
    }

    #[test]
    fn validator_catches_bad_samples() {
        let mut s = sample("a", 3);
        s.validate().unwrap();
        s.mask.set(0, 0, 0, 0, 0.5);
        assert!(s.validate().is_err());
        let mut s = sample("b", 3);
        s.mask = Tensor::zeros(Shape::new(1, 1, 2, 4));
        assert!(s.validate().is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let splits = DatasetSplits {
            train: Dataset::new(vec![sample("a", 3), sample("b", 3)]),
            val: Dataset::new(vec![sample("c", 3)]),
            test: Dataset::default(),
        };
        // Images quantize to 8 bits on disk; these values are multiples of 1/3.
        splits.write_dir(dir.path()).unwrap();
        let back = DatasetSplits::read_dir(dir.path()).unwrap();
        assert_eq!(back.train.len(), 2);
        assert_eq!(back.val.samples[0].id, "c");
        assert_eq!(back.train.samples[1].mask, splits.train.samples[1].mask);
        let diff = back.train.samples[0].image.zip_map(&splits.train.samples[0].image, "t", |a, b| a - b).unwrap();
        assert!(diff.max_abs() <= 0.5 / 255.0 + 1e-7);
        fs::write(dir.path().join(MANIFEST), "nope\n").unwrap();
        assert!(DatasetSplits::read_dir(dir.path()).is_err());
    }
}
