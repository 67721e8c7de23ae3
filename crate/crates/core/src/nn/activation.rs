use crate::error::Result;

use super::layer::missing_cache;
use super::{Ctx, Element, Layer, Tensor4};

pub fn sigmoid<F: Element>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

pub fn relu<F: Element>(x: &Tensor4<F>) -> Tensor4<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn sigmoid_tensor<F: Element>(x: &Tensor4<F>) -> Tensor4<F> {
    x.map(sigmoid)
}

#[derive(Default)]
pub struct Relu {
    mask: Option<(Vec<bool>, [usize; 4])>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { mask: None }
    }
}

impl<F: Element> Layer<F> for Relu {
    fn forward(&mut self, x: &Tensor4<F>, ctx: &mut Ctx) -> Result<Tensor4<F>> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > F::zero()).collect();
        if ctx.tracing() {
            ctx.record(mask.chunks(64).map(|c| {
                c.iter()
                    .enumerate()
                    .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i))
            }));
        }
        let out = relu(x);
        self.mask = Some((mask, x.shape()));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let (mask, shape) = self.mask.as_ref().ok_or_else(|| missing_cache("relu"))?;
        grad.expect_shape(*shape, "relu backward")?;
        let data = grad
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { F::zero() })
            .collect();
        Tensor4::from_vec(*shape, data)
    }
}
