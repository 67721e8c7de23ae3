use rand::Rng;

use crate::error::{FlameError, Result};
use crate::nn::{
    BatchNorm, Conv2d, Ctx, Element, HasParams, Layer, MaxPool2x2, Param, Relu, ResidualBlock,
    Tensor4,
};

/// Shallow residual CNN: a 3x3 conv + BN + ReLU + 2x2 pool stem, then
/// modules of residual blocks each closed by a 2x2 pool. Module outputs are
/// reachable one at a time so two backbones can be interleaved with fusion
/// blocks between modules.
pub struct Backbone<F> {
    pub stem_conv: Conv2d<F>,
    pub stem_bn: BatchNorm<F>,
    stem_relu: Relu,
    stem_pool: MaxPool2x2,
    pub modules: Vec<BackboneModule<F>>,
}

pub struct BackboneModule<F> {
    pub blocks: Vec<ResidualBlock<F>>,
    pool: MaxPool2x2,
}

impl<F: Element> Backbone<F> {
    pub fn new(
        name: &str,
        in_channels: usize,
        channels: &[usize],
        blocks_per_module: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let stem = channels[0];
        let mut width = stem;
        let modules = channels
            .iter()
            .enumerate()
            .map(|(m, &c)| {
                let blocks = (0..blocks_per_module)
                    .map(|b| {
                        let block = ResidualBlock::new(
                            &format!("{name}.module{m}.block{b}"),
                            width,
                            c,
                            rng,
                        );
                        width = c;
                        block
                    })
                    .collect();
                BackboneModule {
                    blocks,
                    pool: MaxPool2x2::new(),
                }
            })
            .collect();
        let mut stem_conv = Conv2d::new(
            &format!("{name}.stem.conv"),
            in_channels,
            stem,
            3,
            1,
            1,
            false,
            rng,
        );
        stem_conv.input_grad = false;
        Backbone {
            stem_conv,
            stem_bn: BatchNorm::new(&format!("{name}.stem.bn"), stem),
            stem_relu: Relu::new(),
            stem_pool: MaxPool2x2::new(),
            modules,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.stem_conv.in_channels
    }

    pub fn forward_stem(&mut self, x: &Tensor4<F>, ctx: &mut Ctx) -> Result<Tensor4<F>> {
        let y = self.stem_conv.forward(x, ctx)?;
        let y = self.stem_bn.forward(&y, ctx)?;
        let y = self.stem_relu.forward(&y, ctx)?;
        self.stem_pool.forward(&y, ctx)
    }

    pub fn backward_stem(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let g = Layer::<F>::backward(&mut self.stem_pool, grad)?;
        let g = Layer::<F>::backward(&mut self.stem_relu, &g)?;
        let g = self.stem_bn.backward(&g)?;
        self.stem_conv.backward(&g)
    }

    pub fn forward_module(
        &mut self,
        index: usize,
        x: &Tensor4<F>,
        ctx: &mut Ctx,
    ) -> Result<Tensor4<F>> {
        let module = self
            .modules
            .get_mut(index)
            .ok_or_else(|| FlameError::shape(format!("backbone has no module {index}")))?;
        let mut y = x.clone();
        for block in &mut module.blocks {
            y = block.forward(&y, ctx)?;
        }
        module.pool.forward(&y, ctx)
    }

    pub fn backward_module(&mut self, index: usize, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let module = self
            .modules
            .get_mut(index)
            .ok_or_else(|| FlameError::shape(format!("backbone has no module {index}")))?;
        let mut g = Layer::<F>::backward(&mut module.pool, grad)?;
        for block in module.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        Ok(g)
    }

    /// Runs every stage; returns the stem output followed by each module output.
    pub fn forward_stages(&mut self, x: &Tensor4<F>, ctx: &mut Ctx) -> Result<Vec<Tensor4<F>>> {
        let mut outs = vec![self.forward_stem(x, ctx)?];
        for m in 0..self.modules.len() {
            let y = self.forward_module(m, outs.last().expect("stem"), ctx)?;
            outs.push(y);
        }
        Ok(outs)
    }

    pub fn set_input_gradient(&mut self, enabled: bool) {
        self.stem_conv.input_grad = enabled;
    }
}

impl<F: Element> HasParams<F> for Backbone<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut v = self.stem_conv.params();
        v.extend(self.stem_bn.params());
        for m in &self.modules {
            for b in &m.blocks {
                v.extend(b.params());
            }
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = self.stem_conv.params_mut();
        v.extend(self.stem_bn.params_mut());
        for m in &mut self.modules {
            for b in &mut m.blocks {
                v.extend(b.params_mut());
            }
        }
        v
    }
}
