use rand::Rng;

use crate::error::{FlameError, Result};

use super::layer::missing_cache;
use super::{gemm, Ctx, Element, Layer, Param, Tensor4};

/// Affine map on flattened samples: `N x H x W x C -> N x 1 x 1 x out`.
pub struct Dense<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub in_features: usize,
    pub out_features: usize,
    pub input_grad: bool,
    cache: Option<Tensor4<F>>,
}

impl<F: Element> Dense<F> {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Dense {
            weight: Param::he_normal(
                format!("{name}.weight"),
                &[out_features, in_features],
                in_features,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_features], true),
            in_features,
            out_features,
            input_grad: true,
            cache: None,
        }
    }

    pub fn zero_init(mut self) -> Self {
        self.weight.fill(F::zero());
        self.bias.fill(F::zero());
        self
    }
}

impl<F: Element> Layer<F> for Dense<F> {
    fn forward(&mut self, x: &Tensor4<F>, _ctx: &mut Ctx) -> Result<Tensor4<F>> {
        let n = x.batch();
        if x.sample_len() != self.in_features {
            return Err(FlameError::shape(format!(
                "{}: expected {} input features, got {}",
                self.weight.name,
                self.in_features,
                x.sample_len()
            )));
        }
        let mut out = Vec::with_capacity(n * self.out_features);
        for _ in 0..n {
            out.extend_from_slice(&self.bias.value);
        }
        gemm(
            false,
            true,
            n,
            self.in_features,
            self.out_features,
            F::one(),
            x.data(),
            &self.weight.value,
            F::one(),
            &mut out,
        );
        self.cache = Some(x.clone());
        Tensor4::from_rows(n, self.out_features, out)
    }

    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let x = self.cache.as_ref().ok_or_else(|| missing_cache("dense"))?;
        let n = x.batch();
        grad.expect_shape([n, 1, 1, self.out_features], "dense backward")?;
        gemm(
            true,
            false,
            self.out_features,
            n,
            self.in_features,
            F::one(),
            grad.data(),
            x.data(),
            F::one(),
            &mut self.weight.grad,
        );
        for row in grad.data().chunks(self.out_features) {
            for (b, &g) in self.bias.grad.iter_mut().zip(row) {
                *b = *b + g;
            }
        }
        let mut dx = Tensor4::zeros(x.shape());
        if self.input_grad {
            gemm(
                false,
                false,
                n,
                self.out_features,
                self.in_features,
                F::one(),
                grad.data(),
                &self.weight.value,
                F::zero(),
                dx.data_mut(),
            );
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<F>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_map_on_flattened_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dense::<f64>::new("d", 4, 2, &mut rng);
        d.weight.value = vec![1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5];
        d.bias.value = vec![10.0, -1.0];
        let x = Tensor4::from_vec([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = d.forward(&x, &mut Ctx::eval()).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 2]);
        assert_eq!(y.data(), &[11.0, 4.0]);
        assert!(d
            .forward(&Tensor4::zeros([1, 1, 1, 3]), &mut Ctx::eval())
            .is_err());
    }
}
