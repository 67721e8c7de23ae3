use rand::Rng;

use crate::error::{FlameError, Result};

use super::layer::missing_cache;
use super::{gemm, Ctx, Element, Layer, Param, Tensor4};

/// 2D cross-correlation with zero padding.
///
/// Weights are laid out `[out, ky, kx, in]`, which matches the patch
/// ordering produced by [`im2col`] so the forward pass is a single GEMM per
/// batch entry.
pub struct Conv2d<F> {
    pub weight: Param<F>,
    pub bias: Option<Param<F>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// When false, `backward` skips the input gradient and returns zeros.
    pub input_grad: bool,
    cache: Option<Tensor4<F>>,
}

pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl<F: Element> Conv2d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: Param::he_normal(
                format!("{name}.weight"),
                &[out_channels, kernel, kernel, in_channels],
                fan_in,
                rng,
            ),
            bias: bias.then(|| Param::zeros(format!("{name}.bias"), &[out_channels], true)),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input_grad: true,
            cache: None,
        }
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            conv_output_size(h, self.kernel, self.stride, self.padding),
            conv_output_size(w, self.kernel, self.stride, self.padding),
        ) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(FlameError::shape(format!(
                "conv {k}x{k} cannot cover a {h}x{w} input",
                k = self.kernel
            ))),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds one `H x W x C` sample into `(Ho*Wo) x (k*k*C)` patch rows.
#[allow(clippy::too_many_arguments)]
pub fn im2col<F: Element>(
    x: &[F],
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out: &mut [F],
) {
    im2col_range(x, h, w, c, k, stride, pad, wo, 0..ho * wo, out);
}

/// [`im2col`] restricted to output pixels `pixels` (row-major over `Ho x Wo`).
#[allow(clippy::too_many_arguments)]
fn im2col_range<F: Element>(
    x: &[F],
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    wo: usize,
    pixels: std::ops::Range<usize>,
    out: &mut [F],
) {
    let row_len = k * k * c;
    for (i, p) in pixels.enumerate() {
        let (oy, ox) = (p / wo, p % wo);
        {
            let row = &mut out[i * row_len..][..row_len];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    let dst = &mut row[(ky * k + kx) * c..][..c];
                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                        dst.iter_mut().for_each(|v| *v = F::zero());
                    } else {
                        let src = (iy as usize * w + ix as usize) * c;
                        dst.copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-row gradients back onto the sample.
#[allow(clippy::too_many_arguments)]
pub fn col2im<F: Element>(
    cols: &[F],
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dx: &mut [F],
) {
    col2im_range(cols, h, w, c, k, stride, pad, wo, 0..ho * wo, dx);
}

#[allow(clippy::too_many_arguments)]
fn col2im_range<F: Element>(
    cols: &[F],
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    wo: usize,
    pixels: std::ops::Range<usize>,
    dx: &mut [F],
) {
    let row_len = k * k * c;
    for (i, p) in pixels.enumerate() {
        let (oy, ox) = (p / wo, p % wo);
        {
            let row = &cols[i * row_len..][..row_len];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = &mut dx[(iy as usize * w + ix as usize) * c..][..c];
                    let src = &row[(ky * k + kx) * c..][..c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Output pixels per im2col tile, sized so one tile of patches stays in cache.
fn tile_pixels(patch_len: usize) -> usize {
    (16384 / patch_len.max(1)).max(16)
}

impl<F: Element> Layer<F> for Conv2d<F> {
    fn forward(&mut self, x: &Tensor4<F>, _ctx: &mut Ctx) -> Result<Tensor4<F>> {
        let [n, h, w, c] = x.shape();
        if c != self.in_channels {
            return Err(FlameError::shape(format!(
                "{}: expected {} input channels, got {c}",
                self.weight.name, self.in_channels
            )));
        }
        let (ho, wo) = self.out_hw(h, w)?;
        let kl = self.patch_len();
        let co = self.out_channels;
        let mut out = Tensor4::zeros([n, ho, wo, co]);
        let pointwise = self.is_pointwise();
        let tile = tile_pixels(kl).min(ho * wo);
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![F::zero(); tile * kl]
        };
        let beta = if self.bias.is_some() {
            F::one()
        } else {
            F::zero()
        };
        for b in 0..n {
            let xs = x.sample(b);
            let dst = &mut out.data_mut()[b * ho * wo * co..(b + 1) * ho * wo * co];
            if let Some(bias) = &self.bias {
                for row in dst.chunks_mut(co) {
                    row.copy_from_slice(&bias.value);
                }
            }
            if pointwise {
                gemm(
                    false,
                    true,
                    ho * wo,
                    kl,
                    co,
                    F::one(),
                    xs,
                    &self.weight.value,
                    beta,
                    dst,
                );
                continue;
            }
            for p0 in (0..ho * wo).step_by(tile) {
                let p1 = (p0 + tile).min(ho * wo);
                let m = p1 - p0;
                im2col_range(
                    xs,
                    h,
                    w,
                    c,
                    self.kernel,
                    self.stride,
                    self.padding,
                    wo,
                    p0..p1,
                    &mut cols,
                );
                gemm(
                    false,
                    true,
                    m,
                    kl,
                    co,
                    F::one(),
                    &cols[..m * kl],
                    &self.weight.value,
                    beta,
                    &mut dst[p0 * co..p1 * co],
                );
            }
        }
        self.cache = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
        let [n, h, w, c] = x.shape();
        let (ho, wo) = self.out_hw(h, w)?;
        grad.expect_shape([n, ho, wo, self.out_channels], "conv2d backward")?;
        let kl = self.patch_len();
        let co = self.out_channels;
        let pointwise = self.is_pointwise();
        let mut dx = Tensor4::zeros(x.shape());
        let tile = tile_pixels(kl).min(ho * wo);
        let mut cols = vec![F::zero(); if pointwise { 0 } else { tile * kl }];
        let mut dcols = vec![F::zero(); if pointwise { 0 } else { tile * kl }];
        for b in 0..n {
            let xs = x.sample(b);
            let gs = grad.sample(b);
            if let Some(bias) = self.bias.as_mut() {
                for row in gs.chunks(co) {
                    for (g, &v) in bias.grad.iter_mut().zip(row) {
                        *g = *g + v;
                    }
                }
            }
            let len = h * w * c;
            let dxs = &mut dx.data_mut()[b * len..(b + 1) * len];
            if pointwise {
                gemm(
                    true,
                    false,
                    co,
                    ho * wo,
                    kl,
                    F::one(),
                    gs,
                    xs,
                    F::one(),
                    &mut self.weight.grad,
                );
                if self.input_grad {
                    gemm(
                        false,
                        false,
                        ho * wo,
                        co,
                        kl,
                        F::one(),
                        gs,
                        &self.weight.value,
                        F::zero(),
                        dxs,
                    );
                }
                continue;
            }
            for p0 in (0..ho * wo).step_by(tile) {
                let p1 = (p0 + tile).min(ho * wo);
                let m = p1 - p0;
                let gt = &gs[p0 * co..p1 * co];
                im2col_range(
                    xs,
                    h,
                    w,
                    c,
                    self.kernel,
                    self.stride,
                    self.padding,
                    wo,
                    p0..p1,
                    &mut cols,
                );
                // dW (co x kl) += dY^T (co x m) * patches (m x kl)
                gemm(
                    true,
                    false,
                    co,
                    m,
                    kl,
                    F::one(),
                    gt,
                    &cols[..m * kl],
                    F::one(),
                    &mut self.weight.grad,
                );
                if self.input_grad {
                    gemm(
                        false,
                        false,
                        m,
                        co,
                        kl,
                        F::one(),
                        gt,
                        &self.weight.value,
                        F::zero(),
                        &mut dcols[..m * kl],
                    );
                    col2im_range(
                        &dcols,
                        h,
                        w,
                        c,
                        self.kernel,
                        self.stride,
                        self.padding,
                        wo,
                        p0..p1,
                        dxs,
                    );
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<F>> {
        std::iter::once(&self.weight)
            .chain(self.bias.as_ref())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }
}
