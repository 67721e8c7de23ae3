use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{Element, Param, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass state: mode, the dropout RNG, and an optional trace of
/// every piecewise decision (ReLU masks, pooling winners). Gradient checks
/// compare traces to detect finite-difference steps that cross a kink.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
    trace: Option<u64>,
}

impl Ctx {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Ctx {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: None,
        }
    }

    pub fn eval() -> Self {
        Ctx::new(Mode::Eval, 0)
    }

    pub fn train(seed: u64) -> Self {
        Ctx::new(Mode::Train, seed)
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(0xcbf2_9ce4_8422_2325);
        self
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    pub fn trace_value(&self) -> Option<u64> {
        self.trace
    }

    /// FNV-1a fold of a branch decision.
    pub fn record(&mut self, bits: impl IntoIterator<Item = u64>) {
        if let Some(h) = self.trace.as_mut() {
            for b in bits {
                *h ^= b;
                *h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
}

/// A differentiable single-input layer. `forward` caches what `backward`
/// needs; `backward` accumulates parameter gradients and returns the
/// gradient with respect to the input.
pub trait Layer<F: Element> {
    fn forward(&mut self, x: &Tensor4<F>, ctx: &mut Ctx) -> Result<Tensor4<F>>;
    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>>;
    fn params(&self) -> Vec<&Param<F>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        Vec::new()
    }
}

/// Parameter collection for composite modules that are not single-input layers.
pub trait HasParams<F: Element> {
    fn params(&self) -> Vec<&Param<F>>;
    fn params_mut(&mut self) -> Vec<&mut Param<F>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_trainable(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.len())
            .sum()
    }
}

pub(crate) fn missing_cache(layer: &str) -> crate::error::FlameError {
    crate::error::FlameError::shape(format!("{layer}: backward called before forward"))
}
