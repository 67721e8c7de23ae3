use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Element;

/// One named parameter array with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
    /// Running statistics are stored as non-trainable params.
    pub trainable: bool,
}

impl<F: Element> Param<F> {
    pub fn zeros(name: impl Into<String>, shape: &[usize], trainable: bool) -> Self {
        Self::filled(name, shape, F::zero(), trainable)
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: F, trainable: bool) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![v; len],
            grad: vec![F::zero(); len],
            trainable,
        }
    }

    /// `N(0, 2 / fan_in)` initialisation. Draws happen in f64 so the same
    /// seed gives the same (rounded) weights at either precision.
    pub fn he_normal(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Self::zeros(name, shape, true);
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut p.value {
            *v = F::from_f64(normal.sample(rng));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = F::zero());
    }

    pub fn fill(&mut self, v: F) {
        self.value.iter_mut().for_each(|x| *x = v);
    }

    pub fn prefixed(mut self, prefix: &str) -> Self {
        self.name = format!("{prefix}.{}", self.name);
        self
    }
}
