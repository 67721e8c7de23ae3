use crate::error::Result;

use super::{Ctx, Element, Layer, Param, Tensor4};

/// Layers applied in order.
pub struct Sequential<F> {
    layers: Vec<Box<dyn Layer<F> + Send>>,
}

impl<F: Element> Default for Sequential<F> {
    fn default() -> Self {
        Sequential { layers: Vec::new() }
    }
}

impl<F: Element> Sequential<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer<F> + Send + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn with(mut self, layer: impl Layer<F> + Send + 'static) -> Self {
        self.push(layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<F: Element> Layer<F> for Sequential<F> {
    fn forward(&mut self, x: &Tensor4<F>, ctx: &mut Ctx) -> Result<Tensor4<F>> {
        let mut cur = x.clone();
        for l in &mut self.layers {
            cur = l.forward(&cur, ctx)?;
        }
        Ok(cur)
    }

    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}
