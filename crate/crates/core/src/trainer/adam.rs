use crate::error::{FlameError, Result};
use crate::model::OptimizerState;
use crate::nn::{Element, Param};

/// Adam with bias correction. Moments are kept for trainable parameters
/// only, in the order the model lists them.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: OptimizerState<F>,
}

impl<F: Element> Adam<F> {
    pub fn new(params: &[&mut Param<F>], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<F>> = params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| vec![F::zero(); p.value.len()])
            .collect();
        Adam {
            beta1,
            beta2,
            eps,
            state: OptimizerState {
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
        }
    }

    pub fn with_state(mut self, state: OptimizerState<F>) -> Result<Self> {
        let same = state.m.len() == self.state.m.len()
            && state
                .m
                .iter()
                .zip(&self.state.m)
                .all(|(a, b)| a.len() == b.len())
            && state
                .v
                .iter()
                .zip(&self.state.v)
                .all(|(a, b)| a.len() == b.len());
        if !same {
            return Err(FlameError::Checkpoint(
                "optimizer state does not fit this model".into(),
            ));
        }
        self.state = state;
        Ok(self)
    }

    pub fn state(&self) -> &OptimizerState<F> {
        &self.state
    }

    pub fn steps(&self) -> u64 {
        self.state.step
    }

    /// One update from the accumulated gradients, which are then cleared.
    pub fn step(&mut self, params: Vec<&mut Param<F>>, lr: f64) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let (b1, b2) = (F::from_f64(self.beta1), F::from_f64(self.beta2));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step = F::from_f64(lr / c1);
        let root_c2 = F::from_f64(c2.sqrt());
        let eps = F::from_f64(self.eps);
        let trainable = params.into_iter().filter(|p| p.trainable);
        for ((p, m), v) in trainable.zip(&mut self.state.m).zip(&mut self.state.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                p.value[i] = p.value[i] - step * m[i] / (v[i].sqrt() / root_c2 + eps);
                p.grad[i] = F::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Param::<f64>::filled("w", &[3], 1.0, true);
        p.grad = vec![0.5, -2.0, 0.0];
        let mut frozen = Param::<f64>::filled("bn.mean", &[1], 0.0, false);
        frozen.grad = vec![9.0];
        let mut adam = Adam::new(&[&mut p, &mut frozen], 0.9, 0.999, 1e-8);
        adam.step(vec![&mut p, &mut frozen], 0.1);
        assert!((p.value[0] - 0.9).abs() < 1e-7);
        assert!((p.value[1] - 1.1).abs() < 1e-7);
        assert_eq!(p.value[2], 1.0);
        assert_eq!(frozen.value[0], 0.0);
        assert!(p.grad.iter().all(|&g| g == 0.0));
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Param::<f64>::filled("w", &[2], 3.0, true);
        let mut adam = Adam::new(&[&mut p], 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            p.grad = p.value.iter().map(|&w| 2.0 * (w - 1.0)).collect();
            adam.step(vec![&mut p], 0.01);
        }
        assert!(
            p.value.iter().all(|&w| (w - 1.0).abs() < 1e-3),
            "{:?}",
            p.value
        );
    }
}
