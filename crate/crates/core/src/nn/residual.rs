use rand::Rng;

use crate::error::Result;

use super::{BatchNorm, Conv2d, Ctx, Element, Layer, Param, Relu, Tensor4};

/// Basic residual block: `relu(bn(conv(relu(bn(conv(x))))) + skip(x))`.
/// Both convolutions are 3x3, stride 1, padding 1 and carry no bias (the
/// following batch norm supplies the shift). The skip is the identity when
/// channel counts agree and a biased 1x1 convolution otherwise.
pub struct ResidualBlock<F> {
    pub conv1: Conv2d<F>,
    pub bn1: BatchNorm<F>,
    relu1: Relu,
    pub conv2: Conv2d<F>,
    pub bn2: BatchNorm<F>,
    pub projection: Option<Conv2d<F>>,
    relu_out: Relu,
}

impl<F: Element> ResidualBlock<F> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(
                &format!("{name}.conv1"),
                in_channels,
                out_channels,
                3,
                1,
                1,
                false,
                rng,
            ),
            bn1: BatchNorm::new(&format!("{name}.bn1"), out_channels),
            relu1: Relu::new(),
            conv2: Conv2d::new(
                &format!("{name}.conv2"),
                out_channels,
                out_channels,
                3,
                1,
                1,
                false,
                rng,
            ),
            bn2: BatchNorm::new(&format!("{name}.bn2"), out_channels),
            projection: (in_channels != out_channels).then(|| {
                Conv2d::new(
                    &format!("{name}.proj"),
                    in_channels,
                    out_channels,
                    1,
                    1,
                    0,
                    true,
                    rng,
                )
            }),
            relu_out: Relu::new(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }

    /// Zeroes both convolution kernels, leaving only the skip path.
    pub fn zero_branch(&mut self) {
        self.conv1.weight.fill(F::zero());
        self.conv2.weight.fill(F::zero());
    }
}

impl<F: Element> Layer<F> for ResidualBlock<F> {
    fn forward(&mut self, x: &Tensor4<F>, ctx: &mut Ctx) -> Result<Tensor4<F>> {
        let a = self.conv1.forward(x, ctx)?;
        let a = self.bn1.forward(&a, ctx)?;
        let a = self.relu1.forward(&a, ctx)?;
        let b = self.conv2.forward(&a, ctx)?;
        let mut b = self.bn2.forward(&b, ctx)?;
        match self.projection.as_mut() {
            Some(p) => b.add_assign(&p.forward(x, ctx)?)?,
            None => b.add_assign(x)?,
        }
        self.relu_out.forward(&b, ctx)
    }

    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let g = self.relu_out.backward(grad)?;
        let gb = self.bn2.backward(&g)?;
        let gb = self.conv2.backward(&gb)?;
        let gb = Layer::<F>::backward(&mut self.relu1, &gb)?;
        let gb = self.bn1.backward(&gb)?;
        let mut dx = self.conv1.backward(&gb)?;
        match self.projection.as_mut() {
            Some(p) => dx.add_assign(&p.backward(&g)?)?,
            None => dx.add_assign(&g)?,
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<F>> {
        let mut v = self.conv1.params();
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        if let Some(p) = &self.projection {
            v.extend(p.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        if let Some(p) = self.projection.as_mut() {
            v.extend(p.params_mut());
        }
        v
    }
}
