use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Dilated encoder with a 1/8-resolution bottleneck and a plain decoder.
    HairSegNet,
    /// Unmodified-stride encoder with skip connections into the decoder.
    HairMatteNet,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::HairSegNet => "hairsegnet",
            Variant::HairMatteNet => "hairmattenet",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hairsegnet" | "seg" => Ok(Variant::HairSegNet),
            "hairmattenet" | "matte" => Ok(Variant::HairMatteNet),
            other => Err(Error::InvalidSpec(format!("unknown variant {other:?} (expected hairsegnet or hairmattenet)"))),
        }
    }
}

pub const DECODER_DEPTHS: [usize; 4] = [16, 32, 64, 128];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Square input side in pixels.
    pub input_size: usize,
    pub num_classes: usize,
    /// Scales every encoder channel count; 1.0 is the full-size network.
    pub width_multiplier: f64,
    pub decoder_depth: usize,
    pub use_batchnorm: bool,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        ModelSpec { variant, input_size: 224, num_classes: 2, width_multiplier: 1.0, decoder_depth: 64, use_batchnorm: true }
    }

    pub fn hairsegnet() -> Self {
        Self::new(Variant::HairSegNet)
    }

    pub fn hairmattenet() -> Self {
        Self::new(Variant::HairMatteNet)
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width_multiplier = width;
        self
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.num_classes = classes;
        self
    }

    pub fn with_decoder_depth(mut self, depth: usize) -> Self {
        self.decoder_depth = depth;
        self
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.use_batchnorm = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            problems.push(format!("input_size {} must be a positive multiple of 32", self.input_size));
        }
        if self.num_classes < 2 {
            problems.push(format!("num_classes {} must be at least 2", self.num_classes));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            problems.push(format!("width_multiplier {} must lie in (0, 1]", self.width_multiplier));
        }
        if !DECODER_DEPTHS.contains(&self.decoder_depth) {
            problems.push(format!("decoder_depth {} must be one of {:?}", self.decoder_depth, DECODER_DEPTHS));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(problems.join("; ")))
        }
    }

    /// Channel count after applying the width multiplier.
    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_multiplier).round() as usize).max(1)
    }

    /// `key=value` lines in a fixed order; [`parse_canonical`](Self::parse_canonical) inverts it.
    pub fn to_canonical(&self) -> String {
        format!(
            "variant={}\ninput_size={}\nnum_classes={}\nwidth_multiplier={}\ndecoder_depth={}\nuse_batchnorm={}\n",
            self.variant,
            self.input_size,
            self.num_classes,
            self.width_multiplier,
            self.decoder_depth,
            self.use_batchnorm
        )
    }

    pub fn parse_canonical(text: &str) -> Result<Self> {
        let mut spec = ModelSpec::hairsegnet();
        let mut seen = [false; 6];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::InvalidSpec(format!("expected key=value, got {line:?}")))?;
            let bad = |what: &str| Error::InvalidSpec(format!("bad {what} value {value:?}"));
            let slot = match key {
                "variant" => {
                    spec.variant = value.parse()?;
                    0
                }
                "input_size" => {
                    spec.input_size = value.parse().map_err(|_| bad(key))?;
                    1
                }
                "num_classes" => {
                    spec.num_classes = value.parse().map_err(|_| bad(key))?;
                    2
                }
                "width_multiplier" => {
                    spec.width_multiplier = value.parse().map_err(|_| bad(key))?;
                    3
                }
                "decoder_depth" => {
                    spec.decoder_depth = value.parse().map_err(|_| bad(key))?;
                    4
                }
                "use_batchnorm" => {
                    spec.use_batchnorm = value.parse().map_err(|_| bad(key))?;
                    5
                }
                other => return Err(Error::InvalidSpec(format!("unknown spec key {other:?}"))),
            };
            seen[slot] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let names = ["variant", "input_size", "num_classes", "width_multiplier", "decoder_depth", "use_batchnorm"];
            return Err(Error::InvalidSpec(format!("missing key {}", names[missing])));
        }
        Ok(spec)
    }
}
