//! Grouped, strided, dilated 2-D convolution.
//!
//! Dense and pointwise convolutions lower to GEMM through an im2col buffer
//! (skipped entirely for unstrided 1×1 kernels); depthwise convolutions run
//! as direct loops.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output extent is `ceil(in / stride)`; any odd padding goes after.
    Same,
    /// Symmetric zero padding.
    Explicit(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvConfig {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig { stride: 1, dilation: 1, groups: 1, padding: Padding::Same }
    }
}

impl ConvConfig {
    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }
    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }
    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }
    pub fn padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }
}

/// Kernel, optional bias and geometry of one convolution.
#[derive(Clone, Debug)]
pub struct ConvParams<T = f32> {
    /// `(out_c, in_c / groups, kh, kw)`
    pub kernel: Tensor<T>,
    pub bias: Option<Vec<T>>,
    pub config: ConvConfig,
}

impl<T: Scalar> ConvParams<T> {
    pub fn is_depthwise(&self, in_c: usize) -> bool {
        let k = self.kernel.shape();
        self.config.groups == in_c && k.n() == in_c && k.c() == 1
    }
}

/// Output extent and leading pad along one spatial axis.
pub fn output_extent(input: usize, kernel: usize, cfg: &ConvConfig) -> Option<(usize, usize)> {
    let eff = (kernel - 1) * cfg.dilation + 1;
    match cfg.padding {
        Padding::Same => {
            if input == 0 {
                return None;
            }
            let out = input.div_ceil(cfg.stride);
            let total = ((out - 1) * cfg.stride + eff).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Explicit(p) => {
            let padded = input + 2 * p;
            if padded < eff {
                return None;
            }
            Some(((padded - eff) / cfg.stride + 1, p))
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub n: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Geometry {
    pub fn new(input: Shape, kernel: Shape, cfg: &ConvConfig) -> Result<Self> {
        const OP: &str = "conv2d";
        if cfg.stride == 0 || cfg.dilation == 0 || cfg.groups == 0 {
            return Err(Error::invalid(OP, "stride, dilation and groups must be positive"));
        }
        let (in_c, out_c, g) = (input.c(), kernel.n(), cfg.groups);
        if in_c % g != 0 {
            return Err(Error::invalid(OP, format!("groups {g} does not divide {in_c} input channels")));
        }
        if out_c % g != 0 {
            return Err(Error::invalid(OP, format!("groups {g} does not divide {out_c} output channels")));
        }
        if kernel.c() != in_c / g {
            return Err(Error::dim(OP, "channel", kernel.c() * g, in_c));
        }
        let (kh, kw) = (kernel.h(), kernel.w());
        if kh == 0 || kw == 0 {
            return Err(Error::invalid(OP, "empty kernel"));
        }
        let (out_h, pad_top) = output_extent(input.h(), kh, cfg).ok_or(Error::dim(OP, "height", kh, input.h()))?;
        let (out_w, pad_left) = output_extent(input.w(), kw, cfg).ok_or(Error::dim(OP, "width", kw, input.w()))?;
        Ok(Geometry {
            n: input.n(),
            in_c,
            in_h: input.h(),
            in_w: input.w(),
            out_c,
            kh,
            kw,
            out_h,
            out_w,
            pad_top,
            pad_left,
            stride: cfg.stride,
            dilation: cfg.dilation,
            groups: g,
        })
    }

    fn cin_g(&self) -> usize {
        self.in_c / self.groups
    }
    fn cout_g(&self) -> usize {
        self.out_c / self.groups
    }
    fn k_len(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }
    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.out_c, self.out_h, self.out_w)
    }
    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }
    /// Unstrided, unpadded 1×1: the input planes already form the im2col matrix.
    fn is_direct_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Half-open range of output coordinates whose input tap
    /// `o * stride + offset` lands inside `[0, input)`.
    fn valid_range(&self, offset: isize, input: usize, output: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        let last = input as isize - 1 - offset;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        let lo = lo.max(0) as usize;
        let hi = (hi.max(0) as usize).min(output);
        (lo, hi.max(lo))
    }
}

/// Multiply-accumulate count of one convolution per input sample.
pub fn conv_macs(in_c: usize, out_c: usize, kernel: usize, groups: usize, out_h: usize, out_w: usize) -> u64 {
    (out_h * out_w * out_c * (in_c / groups) * kernel * kernel) as u64
}

/// Standalone convolution on concrete tensors.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    forward(input, &params.kernel, params.bias.as_deref(), &params.config)
}

#[allow(clippy::needless_range_loop)]
fn im2col<T: Scalar>(geo: &Geometry, x: &[T], group: usize, cols: &mut [T]) {
    let p = geo.out_plane();
    let plane = geo.in_plane();
    let mut row = 0;
    for ci in 0..geo.cin_g() {
        let src = &x[(group * geo.cin_g() + ci) * plane..][..plane];
        for ky in 0..geo.kh {
            let oy_off = (ky * geo.dilation) as isize - geo.pad_top as isize;
            let (y0, y1) = geo.valid_range(oy_off, geo.in_h, geo.out_h);
            for kx in 0..geo.kw {
                let ox_off = (kx * geo.dilation) as isize - geo.pad_left as isize;
                let (x0, x1) = geo.valid_range(ox_off, geo.in_w, geo.out_w);
                let dst = &mut cols[row * p..][..p];
                dst.fill(T::zero());
                for oy in y0..y1 {
                    let iy = (oy * geo.stride) as isize + oy_off;
                    let src_row = &src[iy as usize * geo.in_w..][..geo.in_w];
                    let dst_row = &mut dst[oy * geo.out_w..][..geo.out_w];
                    for ox in x0..x1 {
                        let ix = (ox * geo.stride) as isize + ox_off;
                        dst_row[ox] = src_row[ix as usize];
                    }
                }
                row += 1;
            }
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn col2im<T: Scalar>(geo: &Geometry, cols: &[T], group: usize, dx: &mut [T]) {
    let p = geo.out_plane();
    let plane = geo.in_plane();
    let mut row = 0;
    for ci in 0..geo.cin_g() {
        let dst = &mut dx[(group * geo.cin_g() + ci) * plane..][..plane];
        for ky in 0..geo.kh {
            let oy_off = (ky * geo.dilation) as isize - geo.pad_top as isize;
            let (y0, y1) = geo.valid_range(oy_off, geo.in_h, geo.out_h);
            for kx in 0..geo.kw {
                let ox_off = (kx * geo.dilation) as isize - geo.pad_left as isize;
                let (x0, x1) = geo.valid_range(ox_off, geo.in_w, geo.out_w);
                let src = &cols[row * p..][..p];
                for oy in y0..y1 {
                    let iy = (oy * geo.stride) as isize + oy_off;
                    let dst_row = &mut dst[iy as usize * geo.in_w..][..geo.in_w];
                    let src_row = &src[oy * geo.out_w..][..geo.out_w];
                    for ox in x0..x1 {
                        let ix = (ox * geo.stride) as isize + ox_off;
                        dst_row[ix as usize] += src_row[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn depthwise_forward<T: Scalar>(geo: &Geometry, x: &[T], k: &[T], out: &mut [T]) {
    let (ip, op, kk) = (geo.in_plane(), geo.out_plane(), geo.kh * geo.kw);
    for c in 0..geo.in_c {
        let src = &x[c * ip..][..ip];
        let dst = &mut out[c * op..][..op];
        let kern = &k[c * kk..][..kk];
        for ky in 0..geo.kh {
            let oy_off = (ky * geo.dilation) as isize - geo.pad_top as isize;
            let (y0, y1) = geo.valid_range(oy_off, geo.in_h, geo.out_h);
            for kx in 0..geo.kw {
                let wv = kern[ky * geo.kw + kx];
                let ox_off = (kx * geo.dilation) as isize - geo.pad_left as isize;
                let (x0, x1) = geo.valid_range(ox_off, geo.in_w, geo.out_w);
                for oy in y0..y1 {
                    let iy = ((oy * geo.stride) as isize + oy_off) as usize;
                    let src_row = &src[iy * geo.in_w..][..geo.in_w];
                    let dst_row = &mut dst[oy * geo.out_w..][..geo.out_w];
                    if geo.stride == 1 {
                        let ix0 = (x0 as isize + ox_off) as usize;
                        for (d, &s) in dst_row[x0..x1].iter_mut().zip(&src_row[ix0..ix0 + (x1 - x0)]) {
                            *d += wv * s;
                        }
                    } else {
                        for ox in x0..x1 {
                            let ix = ((ox * geo.stride) as isize + ox_off) as usize;
                            dst_row[ox] += wv * src_row[ix];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn depthwise_backward<T: Scalar>(
    geo: &Geometry,
    x: &[T],
    k: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
) {
    let (ip, op, kk) = (geo.in_plane(), geo.out_plane(), geo.kh * geo.kw);
    for c in 0..geo.in_c {
        let src = &x[c * ip..][..ip];
        let g = &dy[c * op..][..op];
        for ky in 0..geo.kh {
            let oy_off = (ky * geo.dilation) as isize - geo.pad_top as isize;
            let (y0, y1) = geo.valid_range(oy_off, geo.in_h, geo.out_h);
            for kx in 0..geo.kw {
                let ki = c * kk + ky * geo.kw + kx;
                let wv = k[ki];
                let ox_off = (kx * geo.dilation) as isize - geo.pad_left as isize;
                let (x0, x1) = geo.valid_range(ox_off, geo.in_w, geo.out_w);
                let mut acc = T::zero();
                for oy in y0..y1 {
                    let iy = ((oy * geo.stride) as isize + oy_off) as usize;
                    let g_row = &g[oy * geo.out_w..][..geo.out_w];
                    for ox in x0..x1 {
                        let ix = ((ox * geo.stride) as isize + ox_off) as usize;
                        let gv = g_row[ox];
                        acc += gv * src[iy * geo.in_w + ix];
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[c * ip + iy * geo.in_w + ix] += wv * gv;
                        }
                    }
                }
                if let Some(dk) = dk.as_deref_mut() {
                    dk[ki] += acc;
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&[T]>,
    cfg: &ConvConfig,
) -> Result<Tensor<T>> {
    let geo = Geometry::new(input.shape(), kernel.shape(), cfg)?;
    if let Some(b) = bias {
        if b.len() != geo.out_c {
            return Err(Error::dim("conv2d", "channel", geo.out_c, b.len()));
        }
    }
    let mut out = Tensor::zeros(geo.out_shape());
    let (p, kl) = (geo.out_plane(), geo.k_len());
    let mut cols = if geo.is_depthwise() || geo.is_direct_pointwise() { Vec::new() } else { vec![T::zero(); kl * p] };
    for n in 0..geo.n {
        let x = input.sample(n);
        let y = out.sample_mut(n);
        if geo.is_depthwise() {
            depthwise_forward(&geo, x, kernel.data(), y);
        } else {
            for g in 0..geo.groups {
                let w = &kernel.data()[g * geo.cout_g() * kl..][..geo.cout_g() * kl];
                let dst = &mut y[g * geo.cout_g() * p..][..geo.cout_g() * p];
                let b: &[T] = if geo.is_direct_pointwise() {
                    &x[g * geo.cin_g() * p..][..kl * p]
                } else {
                    im2col(&geo, x, g, &mut cols);
                    &cols
                };
                T::gemm(geo.cout_g(), kl, p, T::one(), w, kl, 1, b, p, 1, T::zero(), dst, p, 1);
            }
        }
        if let Some(b) = bias {
            for (plane, &bv) in y.chunks_mut(p).zip(b) {
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    cfg: &ConvConfig,
    dy: &Tensor<T>,
    need_input: bool,
    need_kernel: bool,
    need_bias: bool,
) -> Result<ConvGrads<T>> {
    let geo = Geometry::new(input.shape(), kernel.shape(), cfg)?;
    dy.expect_shape("conv2d backward", geo.out_shape())?;
    let (p, kl) = (geo.out_plane(), geo.k_len());
    let mut dx = need_input.then(|| Tensor::zeros(input.shape()));
    let mut dk = need_kernel.then(|| Tensor::zeros(kernel.shape()));

    if geo.is_depthwise() {
        for n in 0..geo.n {
            depthwise_backward(
                &geo,
                input.sample(n),
                kernel.data(),
                dy.sample(n),
                dx.as_mut().map(|t| t.sample_mut(n)),
                dk.as_mut().map(|t| t.data_mut()),
            );
        }
    } else {
        let direct = geo.is_direct_pointwise();
        let mut cols = if direct { Vec::new() } else { vec![T::zero(); kl * p] };
        let mut dcols = if direct || !need_input { Vec::new() } else { vec![T::zero(); kl * p] };
        for n in 0..geo.n {
            let x = input.sample(n);
            let g_all = dy.sample(n);
            for g in 0..geo.groups {
                let w = &kernel.data()[g * geo.cout_g() * kl..][..geo.cout_g() * kl];
                let gy = &g_all[g * geo.cout_g() * p..][..geo.cout_g() * p];
                if let Some(dk) = dk.as_mut() {
                    let b: &[T] = if direct {
                        &x[g * geo.cin_g() * p..][..kl * p]
                    } else {
                        im2col(&geo, x, g, &mut cols);
                        &cols
                    };
                    let dw = &mut dk.data_mut()[g * geo.cout_g() * kl..][..geo.cout_g() * kl];
                    // dW (cout_g × K) += dY (cout_g × P) · colsᵀ (P × K)
                    T::gemm(geo.cout_g(), p, kl, T::one(), gy, p, 1, b, 1, p, T::one(), dw, kl, 1);
                }
                if let Some(dx) = dx.as_mut() {
                    let dxs = dx.sample_mut(n);
                    if direct {
                        let dst = &mut dxs[g * geo.cin_g() * p..][..kl * p];
                        // dX (K × P) = Wᵀ (K × cout_g) · dY (cout_g × P)
                        T::gemm(kl, geo.cout_g(), p, T::one(), w, 1, kl, gy, p, 1, T::zero(), dst, p, 1);
                    } else {
                        T::gemm(kl, geo.cout_g(), p, T::one(), w, 1, kl, gy, p, 1, T::zero(), &mut dcols, p, 1);
                        col2im(&geo, &dcols, g, dxs);
                    }
                }
            }
        }
    }

    let db = need_bias.then(|| {
        let mut db = vec![T::zero(); geo.out_c];
        for n in 0..geo.n {
            for (o, plane) in dy.sample(n).chunks(p).enumerate() {
                db[o] += plane.iter().copied().sum();
            }
        }
        db
    });
    Ok(ConvGrads { input: dx, kernel: dk, bias: db })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct six-loop convolution, used as the reference for every path.
    fn naive(input: &Tensor<f64>, kernel: &Tensor<f64>, cfg: &ConvConfig) -> Tensor<f64> {
        let geo = Geometry::new(input.shape(), kernel.shape(), cfg).unwrap();
        let mut out = Tensor::zeros(geo.out_shape());
        let (cin_g, cout_g) = (geo.cin_g(), geo.cout_g());
        for n in 0..geo.n {
            for o in 0..geo.out_c {
                let g = o / cout_g;
                for oy in 0..geo.out_h {
                    for ox in 0..geo.out_w {
                        let mut acc = 0.0;
                        for ci in 0..cin_g {
                            for ky in 0..geo.kh {
                                for kx in 0..geo.kw {
                                    let iy = (oy * geo.stride + ky * geo.dilation) as isize - geo.pad_top as isize;
                                    let ix = (ox * geo.stride + kx * geo.dilation) as isize - geo.pad_left as isize;
                                    if iy < 0 || ix < 0 || iy >= geo.in_h as isize || ix >= geo.in_w as isize {
                                        continue;
                                    }
                                    acc += kernel.at(o, ci, ky, kx)
                                        * input.at(n, g * cin_g + ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set(n, o, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_box_sum() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.0);
        let params = ConvParams { kernel: Tensor::full(Shape::new(1, 1, 3, 3), 1.0), bias: None, config: ConvConfig::default() };
        let y = conv2d(&x, &params).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (yy, xx) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, yy, xx), 4.0);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn same_padding_extents() {
        let s2 = ConvConfig::default().stride(2);
        assert_eq!(output_extent(224, 3, &s2), Some((112, 0)));
        assert_eq!(output_extent(7, 3, &s2), Some((4, 1)));
        assert_eq!(output_extent(28, 3, &ConvConfig::default().dilation(4)), Some((28, 4)));
        assert_eq!(output_extent(2, 5, &ConvConfig::default().padding(Padding::Explicit(1))), None);
    }

    #[test]
    fn all_paths_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases = [
            // (in_c, out_c, k, stride, dilation, groups, padding)
            (3, 4, 3, 1, 1, 1, Padding::Same),
            (3, 4, 3, 2, 1, 1, Padding::Same),
            (4, 4, 3, 1, 2, 4, Padding::Same),
            (4, 4, 3, 2, 1, 4, Padding::Same),
            (6, 4, 1, 1, 1, 2, Padding::Same),
            (4, 6, 1, 2, 1, 1, Padding::Same),
            (2, 2, 3, 1, 1, 1, Padding::Explicit(0)),
            (2, 4, 3, 2, 3, 2, Padding::Explicit(2)),
        ];
        for (i, &(ci, co, k, s, d, g, pad)) in cases.iter().enumerate() {
            let cfg = ConvConfig { stride: s, dilation: d, groups: g, padding: pad };
            let x = random(Shape::new(2, ci, 9, 7), &mut rng);
            let w = random(Shape::new(co, ci / g, k, k), &mut rng);
            let fast = forward(&x, &w, None, &cfg).unwrap();
            let slow = naive(&x, &w, &cfg);
            assert_eq!(fast.shape(), slow.shape(), "case {i}");
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "case {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(2, 2, 3, 3));
        let err = forward(&x, &w, None, &ConvConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "channel", .. }), "{err}");
        let w = Tensor::<f32>::zeros(Shape::new(2, 3, 5, 5));
        let cfg = ConvConfig::default().padding(Padding::Explicit(0));
        let err = forward(&x, &w, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: "height", .. }), "{err}");
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let w = Tensor::<f32>::zeros(Shape::new(2, 1, 1, 1));
        let y = forward(&x, &w, Some(&[1.5, -2.0]), &ConvConfig::default()).unwrap();
        assert_eq!(y.plane(0, 0), &[1.5; 4]);
        assert_eq!(y.plane(0, 1), &[-2.0; 4]);
    }
}
