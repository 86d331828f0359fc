//! Luminance-preserving hair recolouring.
//!
//! Each pixel keeps its luminance `Y` and takes the target's chromaticity:
//! `shifted = Y + s · (Y / Y_t) · (t − Y_t)`, where `t` is the target colour
//! and `Y_t` its luminance. The chroma offset has zero luminance, so any `s`
//! preserves `Y`; `s ≤ 1` is the largest value keeping every channel in
//! `[0, 1]`. The result is blended with the matte: `(1 − m)·img + m·shifted`.

use hairmatte_core::guided_filter::LUMA;
use hairmatte_core::{Error, Result, Shape, Tensor};

/// Target luminance below which the target is treated as achromatic.
const DARK_TARGET: f64 = 1e-6;

pub fn luminance(rgb: [f64; 3]) -> f64 {
    LUMA[0] * rgb[0] + LUMA[1] * rgb[1] + LUMA[2] * rgb[2]
}

pub fn shift_pixel(pixel: [f64; 3], target: [f64; 3]) -> [f64; 3] {
    let y = luminance(pixel);
    let yt = luminance(target);
    if yt < DARK_TARGET {
        return [y; 3];
    }
    let chroma = target.map(|c| (c - yt) * y / yt);
    // Largest s in [0, 1] with y + s·chroma inside [0, 1] on every channel.
    let s = chroma.iter().fold(1.0f64, |s, &c| {
        if c > 0.0 {
            s.min((1.0 - y) / c)
        } else if c < 0.0 {
            s.min(y / -c)
        } else {
            s
        }
    });
    chroma.map(|c| (y + s.max(0.0) * c).clamp(0.0, 1.0))
}

/// Recolours a `(1, 3, h, w)` image under a `(1, 1, h, w)` matte.
pub fn recolor(image: &Tensor, matte: &Tensor, target: [f64; 3]) -> Result<Tensor> {
    let s = image.shape();
    if s.n() != 1 || s.c() != 3 {
        return Err(Error::InvalidArgument { op: "recolor", msg: format!("image shape {s} is not (1, 3, h, w)") });
    }
    matte.expect_shape("recolor", Shape::new(1, 1, s.h(), s.w()))?;
    if !target.iter().all(|c| (0.0..=1.0).contains(c)) {
        return Err(Error::InvalidArgument { op: "recolor", msg: format!("target colour {target:?} outside [0, 1]") });
    }
    let mut out = image.clone();
    let m = matte.plane(0, 0);
    for (i, &weight) in m.iter().enumerate() {
        let alpha = weight.clamp(0.0, 1.0);
        if alpha == 0.0 {
            continue;
        }
        let pixel = [0, 1, 2].map(|c| image.plane(0, c)[i] as f64);
        let shifted = shift_pixel(pixel, target);
        for c in 0..3 {
            let v = (1.0 - alpha as f64) * pixel[c] + alpha as f64 * shifted[c];
            out.plane_mut(0, c)[i] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// Parses `r,g,b` in `[0, 1]` or `#rrggbb`.
pub fn parse_color(text: &str) -> Option<[f64; 3]> {
    if let Some(hex) = text.strip_prefix('#') {
        if hex.len() != 6 {
            return None;
        }
        let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).ok().map(|b| b as f64 / 255.0);
        return Some([byte(0)?, byte(2)?, byte(4)?]);
    }
    let parts: Vec<f64> = text.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    let rgb: [f64; 3] = parts.try_into().ok()?;
    rgb.iter().all(|c| (0.0..=1.0).contains(c)).then_some(rgb)
}
