//! Image files. The native format is binary Netpbm (`P6` colour, `P5`
//! gray, maxval 255): a text header followed by raw bytes, so 8-bit data
//! round-trips exactly. PNG is read and written through the `image` crate.

use std::fs;
use std::path::Path;

use crate::error::{ImageError, Result};
use crate::tensor::{Shape, Tensor};

/// Decodes an image file into a `(1, c, h, w)` tensor in `[0, 1]`, `c` being
/// 1 for gray and 3 for colour sources.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    match bytes {
        [b'P', b'5' | b'6', ..] => decode_netpbm(bytes),
        [0x89, b'P', b'N', b'G', ..] => decode_png(bytes),
        _ => Err(ImageError::UnsupportedFormat(bytes.iter().take(4).copied().collect()).into()),
    }
}

/// Writes a `(1, 1|3, h, w)` tensor; the extension picks the codec
/// (`.ppm`/`.pgm`/`.pnm` native, `.png`). Values are clamped to `[0, 1]` and
/// rounded to 8 bits.
pub fn save_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let bytes = match ext.as_str() {
        "ppm" | "pgm" | "pnm" => encode_netpbm(image)?,
        "png" => encode_png(image)?,
        other => return Err(ImageError::UnsupportedFormat(other.as_bytes().to_vec()).into()),
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved `(h, w, c)` bytes of a `(1, c, h, w)` tensor.
fn interleave(image: &Tensor) -> Result<(usize, usize, usize, Vec<u8>)> {
    let s = image.shape();
    if s.n() != 1 || !(s.c() == 1 || s.c() == 3) {
        return Err(ImageError::Header(format!("cannot encode tensor of shape {s}; need (1, 1|3, h, w)")).into());
    }
    let (c, h, w) = (s.c(), s.h(), s.w());
    let mut out = vec![0u8; c * h * w];
    for ch in 0..c {
        for (i, &v) in image.plane(0, ch).iter().enumerate() {
            out[i * c + ch] = to_u8(v);
        }
    }
    Ok((c, h, w, out))
}

fn planar(c: usize, h: usize, w: usize, bytes: &[u8]) -> Result<Tensor> {
    let mut t = Tensor::zeros(Shape::new(1, c, h, w));
    for ch in 0..c {
        for (i, v) in t.plane_mut(0, ch).iter_mut().enumerate() {
            *v = bytes[i * c + ch] as f32 / 255.0;
        }
    }
    Ok(t)
}

pub fn encode_netpbm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w, body) = interleave(image)?;
    let mut out = format!("P{}\n{w} {h}\n255\n", if c == 3 { 6 } else { 5 }).into_bytes();
    out.extend_from_slice(&body);
    Ok(out)
}

fn decode_netpbm(bytes: &[u8]) -> Result<Tensor> {
    let channels = if bytes[1] == b'6' { 3 } else { 1 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and `#` comments separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Header("expected a number in the netpbm header".into()).into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Header("header number out of range".into()))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::Header(format!("maxval {maxval} unsupported (only 255)")).into());
    }
    if w == 0 || h == 0 {
        return Err(ImageError::Header(format!("empty image {w}×{h}")).into());
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::Header("missing separator after maxval".into()).into());
    }
    pos += 1;
    let expected = w * h * channels;
    let body = &bytes[pos..];
    if body.len() < expected {
        return Err(ImageError::Truncated { expected, found: body.len() }.into());
    }
    planar(channels, h, w, &body[..expected])
}

fn encode_png(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w, body) = interleave(image)?;
    let color = if c == 3 { image::ColorType::Rgb8 } else { image::ColorType::L8 };
    let mut out = Vec::new();
    image::ImageEncoder::write_image(image::codecs::png::PngEncoder::new(&mut out), &body, w as u32, h as u32, color)
        .map_err(|e| ImageError::Codec(e.to_string()))?;
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ImageError::Codec(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        planar(3, h, w, img.to_rgb8().as_raw())
    } else {
        planar(1, h, w, img.to_luma8().as_raw())
    }
}
