//! Cross-modal fusion: the multimodal transfer module (squeeze both
//! streams, excite each from a joint code) and the two aggregation
//! functions used to merge the final feature maps.

use rand::Rng;

use crate::error::{FlameError, Result};
use crate::nn::activation::sigmoid;
use crate::nn::layer::missing_cache;
use crate::nn::{
    global_average_pool, Ctx, Dense, Element, HasParams, Layer, Param, Relu, ResidualBlock, Tensor4,
};

/// Width of the joint code for the given stream widths: a quarter of the
/// total, rounded down.
pub fn joint_width(rgb_channels: usize, heatmap_channels: usize) -> usize {
    (rgb_channels + heatmap_channels) / 4
}

/// Multimodal transfer module. Each stream is rescaled channel-wise by
/// `2 * sigmoid(E)`, where `E` comes from a joint code computed from the
/// spatial means of both streams.
pub struct Mmtm<F> {
    pub joint: Dense<F>,
    pub excite_rgb: Dense<F>,
    pub excite_heatmap: Dense<F>,
    /// ReLU after the joint layer (`mmtm_z_activation`).
    pub z_activation: bool,
    relu_z: Relu,
    cache: Option<MmtmCache<F>>,
}

struct MmtmCache<F> {
    r: Tensor4<F>,
    h: Tensor4<F>,
    gain_r: Vec<F>,
    gain_h: Vec<F>,
}

impl<F: Element> Mmtm<F> {
    pub fn new(
        name: &str,
        rgb_channels: usize,
        heatmap_channels: usize,
        z_activation: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let z = joint_width(rgb_channels, heatmap_channels).max(1);
        Mmtm {
            joint: Dense::new(
                &format!("{name}.joint"),
                rgb_channels + heatmap_channels,
                z,
                rng,
            ),
            excite_rgb: Dense::new(&format!("{name}.excite_rgb"), z, rgb_channels, rng),
            excite_heatmap: Dense::new(&format!("{name}.excite_heatmap"), z, heatmap_channels, rng),
            z_activation,
            relu_z: Relu::new(),
            cache: None,
        }
    }

    pub fn joint_width(&self) -> usize {
        self.joint.out_features
    }

    /// Zero excitation heads make every gain exactly one.
    pub fn zero_excitation(&mut self) {
        for d in [&mut self.excite_rgb, &mut self.excite_heatmap] {
            d.weight.fill(F::zero());
            d.bias.fill(F::zero());
        }
    }

    /// Per-channel gains `(N x C_r, N x C_h)` for the given inputs.
    pub fn gains(
        &mut self,
        r: &Tensor4<F>,
        h: &Tensor4<F>,
        ctx: &mut Ctx,
    ) -> Result<(Vec<F>, Vec<F>)> {
        if r.batch() != h.batch() {
            return Err(FlameError::shape(format!(
                "mmtm streams disagree on batch size: {} vs {}",
                r.batch(),
                h.batch()
            )));
        }
        if r.channels() != self.excite_rgb.out_features
            || h.channels() != self.excite_heatmap.out_features
        {
            return Err(FlameError::shape(format!(
                "mmtm expects {}+{} channels, got {}+{}",
                self.excite_rgb.out_features,
                self.excite_heatmap.out_features,
                r.channels(),
                h.channels()
            )));
        }
        let squeezed = Tensor4::concat_channels(&global_average_pool(r), &global_average_pool(h))?;
        let mut z = self.joint.forward(&squeezed, ctx)?;
        if self.z_activation {
            z = self.relu_z.forward(&z, ctx)?;
        }
        let two = F::one() + F::one();
        let er = self.excite_rgb.forward(&z, ctx)?;
        let eh = self.excite_heatmap.forward(&z, ctx)?;
        Ok((
            er.data().iter().map(|&e| two * sigmoid(e)).collect(),
            eh.data().iter().map(|&e| two * sigmoid(e)).collect(),
        ))
    }

    pub fn forward(
        &mut self,
        r: &Tensor4<F>,
        h: &Tensor4<F>,
        ctx: &mut Ctx,
    ) -> Result<(Tensor4<F>, Tensor4<F>)> {
        let (gain_r, gain_h) = self.gains(r, h, ctx)?;
        let r_out = rescale(r, &gain_r);
        let h_out = rescale(h, &gain_h);
        self.cache = Some(MmtmCache {
            r: r.clone(),
            h: h.clone(),
            gain_r,
            gain_h,
        });
        Ok((r_out, h_out))
    }

    pub fn backward(
        &mut self,
        grad_r: &Tensor4<F>,
        grad_h: &Tensor4<F>,
    ) -> Result<(Tensor4<F>, Tensor4<F>)> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("mmtm"))?;
        grad_r.expect_shape(cache.r.shape(), "mmtm backward (rgb)")?;
        grad_h.expect_shape(cache.h.shape(), "mmtm backward (heatmap)")?;
        let n = cache.r.batch();
        // d gain = sum over space of grad * input; d E = d gain * 2 s (1 - s) = d gain * g (1 - g / 2)
        let excitation_grad = |grad: &Tensor4<F>, x: &Tensor4<F>, gain: &[F]| {
            let c = x.channels();
            let mut de = vec![F::zero(); n * c];
            for b in 0..n {
                for (gr, xr) in grad.sample(b).chunks(c).zip(x.sample(b).chunks(c)) {
                    for ch in 0..c {
                        de[b * c + ch] = de[b * c + ch] + gr[ch] * xr[ch];
                    }
                }
            }
            let half = F::from_f64(0.5);
            for (d, &g) in de.iter_mut().zip(gain) {
                *d = *d * g * (F::one() - g * half);
            }
            Tensor4::from_rows(n, c, de)
        };
        let de_r = excitation_grad(grad_r, &cache.r, &cache.gain_r)?;
        let de_h = excitation_grad(grad_h, &cache.h, &cache.gain_h)?;
        let mut dz = self.excite_rgb.backward(&de_r)?;
        dz.add_assign(&self.excite_heatmap.backward(&de_h)?)?;
        if self.z_activation {
            dz = Layer::<F>::backward(&mut self.relu_z, &dz)?;
        }
        let ds = self.joint.backward(&dz)?;
        let (ds_r, ds_h) = ds.split_channels(cache.r.channels())?;
        let spread = |grad: &Tensor4<F>, x: &Tensor4<F>, gain: &[F], ds: &Tensor4<F>| {
            let [_, hh, ww, c] = x.shape();
            let inv_area = F::from_f64(1.0 / (hh * ww) as f64);
            Tensor4::from_fn(x.shape(), |[b, y, xx, ch]| {
                grad.at([b, y, xx, ch]) * gain[b * c + ch] + ds.at([b, 0, 0, ch]) * inv_area
            })
        };
        Ok((
            spread(grad_r, &cache.r, &cache.gain_r, &ds_r),
            spread(grad_h, &cache.h, &cache.gain_h, &ds_h),
        ))
    }
}

fn rescale<F: Element>(x: &Tensor4<F>, gain: &[F]) -> Tensor4<F> {
    let c = x.channels();
    let hw = x.height() * x.width();
    let mut out = x.clone();
    for (i, row) in out.data_mut().chunks_mut(c).enumerate() {
        let g = &gain[(i / hw) * c..][..c];
        for (v, &k) in row.iter_mut().zip(g) {
            *v = *v * k;
        }
    }
    out
}

impl<F: Element> HasParams<F> for Mmtm<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut v = self.joint.params();
        v.extend(self.excite_rgb.params());
        v.extend(self.excite_heatmap.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = self.joint.params_mut();
        v.extend(self.excite_rgb.params_mut());
        v.extend(self.excite_heatmap.params_mut());
        v
    }
}

/// The transfer function: one MMTM after each of the last two backbone
/// modules, applied in network order by the model.
pub struct TransferFunction<F> {
    pub stages: Vec<Mmtm<F>>,
}

impl<F: Element> TransferFunction<F> {
    /// `widths` are the channel counts of the two fused stages.
    pub fn new(name: &str, widths: &[usize], z_activation: bool, rng: &mut impl Rng) -> Self {
        TransferFunction {
            stages: widths
                .iter()
                .enumerate()
                .map(|(i, &c)| Mmtm::new(&format!("{name}.mmtm{i}"), c, c, z_activation, rng))
                .collect(),
        }
    }

    pub fn zero_excitation(&mut self) {
        self.stages.iter_mut().for_each(Mmtm::zero_excitation);
    }
}

impl<F: Element> HasParams<F> for TransferFunction<F> {
    fn params(&self) -> Vec<&Param<F>> {
        self.stages.iter().flat_map(|m| m.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.stages
            .iter_mut()
            .flat_map(|m| m.params_mut())
            .collect()
    }
}

/// Channel concatenation (RGB first) followed by one residual block.
pub struct ConcatResidual<F> {
    pub block: ResidualBlock<F>,
    rgb_channels: usize,
}

impl<F: Element> ConcatResidual<F> {
    pub fn new(
        name: &str,
        rgb_channels: usize,
        heatmap_channels: usize,
        hybrid: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ConcatResidual {
            block: ResidualBlock::new(
                &format!("{name}.block"),
                rgb_channels + heatmap_channels,
                hybrid,
                rng,
            ),
            rgb_channels,
        }
    }

    pub fn forward(&mut self, r: &Tensor4<F>, h: &Tensor4<F>, ctx: &mut Ctx) -> Result<Tensor4<F>> {
        if r.channels() != self.rgb_channels {
            return Err(FlameError::shape(format!(
                "aggregation expects {} rgb channels, got {}",
                self.rgb_channels,
                r.channels()
            )));
        }
        let joined = Tensor4::concat_channels(r, h)?;
        self.block.forward(&joined, ctx)
    }

    pub fn backward(&mut self, grad: &Tensor4<F>) -> Result<(Tensor4<F>, Tensor4<F>)> {
        self.block.backward(grad)?.split_channels(self.rgb_channels)
    }
}

impl<F: Element> HasParams<F> for ConcatResidual<F> {
    fn params(&self) -> Vec<&Param<F>> {
        self.block.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.block.params_mut()
    }
}

/// Elementwise sum of the two final maps.
pub fn aggregate_additive<F: Element>(r: &Tensor4<F>, h: &Tensor4<F>) -> Result<Tensor4<F>> {
    r.add(h)
}
