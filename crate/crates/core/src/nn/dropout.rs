use rand::Rng;

use crate::error::{FlameError, Result};

use super::layer::missing_cache;
use super::{Ctx, Element, Layer, Mode, Tensor4};

/// Inverted dropout: survivors are scaled by `1 / (1 - p)` in train mode;
/// eval mode is the identity.
pub struct Dropout<F> {
    pub p: f64,
    mask: Option<Vec<F>>,
}

impl<F: Element> Dropout<F> {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(FlameError::Config(format!(
                "dropout probability {p} not in [0, 1)"
            )));
        }
        Ok(Dropout { p, mask: None })
    }
}

impl<F: Element> Layer<F> for Dropout<F> {
    fn forward(&mut self, x: &Tensor4<F>, ctx: &mut Ctx) -> Result<Tensor4<F>> {
        if ctx.mode == Mode::Eval || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let keep = F::from_f64(1.0 / (1.0 - self.p));
        let mask: Vec<F> = (0..x.len())
            .map(|_| {
                if ctx.rng.gen::<f64>() < self.p {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.mask = Some(mask);
        Tensor4::from_vec(x.shape(), data)
    }

    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        match &self.mask {
            None => Ok(grad.clone()),
            Some(mask) if mask.len() == grad.len() => {
                let data = grad.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor4::from_vec(grad.shape(), data)
            }
            Some(_) => Err(missing_cache("dropout")),
        }
    }
}
