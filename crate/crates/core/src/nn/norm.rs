use crate::error::{FlameError, Result};

use super::layer::missing_cache;
use super::{Ctx, Element, Layer, Mode, Param, Tensor4};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over `N x H x W`.
///
/// Train mode normalises with the biased batch variance and folds the
/// unbiased variance into the running estimate; eval mode uses the running
/// estimates only.
pub struct BatchNorm<F> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache<F>>,
}

struct BnCache<F> {
    xhat: Tensor4<F>,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl<F: Element> BatchNorm<F> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(format!("{name}.gamma"), &[channels], F::one(), true),
            beta: Param::zeros(format!("{name}.beta"), &[channels], true),
            running_mean: Param::zeros(format!("{name}.running_mean"), &[channels], false),
            running_var: Param::filled(format!("{name}.running_var"), &[channels], F::one(), false),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

impl<F: Element> Layer<F> for BatchNorm<F> {
    fn forward(&mut self, x: &Tensor4<F>, ctx: &mut Ctx) -> Result<Tensor4<F>> {
        let c = self.channels();
        if x.channels() != c {
            return Err(FlameError::shape(format!(
                "{}: expected {c} channels, got {}",
                self.gamma.name,
                x.channels()
            )));
        }
        let count = x.len() / c.max(1);
        let (mean, var) = match ctx.mode {
            Mode::Train => {
                if x.batch() < 2 {
                    return Err(FlameError::shape(format!(
                        "{}: train-mode batch norm needs batch >= 2, got {}",
                        self.gamma.name,
                        x.batch()
                    )));
                }
                let mut mean = vec![0.0f64; c];
                for row in x.data().chunks(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v.as_f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0f64; c];
                for row in x.data().chunks(c) {
                    for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v.as_f64() - m;
                        *s += d * d;
                    }
                }
                let unbiased = count as f64 / (count as f64 - 1.0);
                var.iter_mut().for_each(|s| *s /= count as f64);
                for i in 0..c {
                    let rm = self.running_mean.value[i].as_f64();
                    let rv = self.running_var.value[i].as_f64();
                    self.running_mean.value[i] =
                        F::from_f64((1.0 - self.momentum) * rm + self.momentum * mean[i]);
                    self.running_var.value[i] =
                        F::from_f64((1.0 - self.momentum) * rv + self.momentum * var[i] * unbiased);
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.value.iter().map(|v| v.as_f64()).collect(),
                self.running_var.value.iter().map(|v| v.as_f64()).collect(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor4::zeros(x.shape());
        let mut out = Tensor4::zeros(x.shape());
        for ((xr, hr), or) in x
            .data()
            .chunks(c)
            .zip(xhat.data_mut().chunks_mut(c))
            .zip(out.data_mut().chunks_mut(c))
        {
            for i in 0..c {
                let h = (xr[i].as_f64() - mean[i]) * inv_std[i];
                hr[i] = F::from_f64(h);
                or[i] = F::from_f64(h * self.gamma.value[i].as_f64() + self.beta.value[i].as_f64());
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            mode: ctx.mode,
        });
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| missing_cache("batch_norm"))?;
        grad.expect_shape(cache.xhat.shape(), "batch_norm backward")?;
        let c = self.channels();
        let count = (grad.len() / c.max(1)) as f64;
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for (gr, hr) in grad.data().chunks(c).zip(cache.xhat.data().chunks(c)) {
            for i in 0..c {
                let g = gr[i].as_f64();
                sum_g[i] += g;
                sum_gx[i] += g * hr[i].as_f64();
            }
        }
        for i in 0..c {
            self.gamma.grad[i] = self.gamma.grad[i] + F::from_f64(sum_gx[i]);
            self.beta.grad[i] = self.beta.grad[i] + F::from_f64(sum_g[i]);
        }
        let gamma: Vec<f64> = self.gamma.value.iter().map(|v| v.as_f64()).collect();
        let mut dx = Tensor4::zeros(grad.shape());
        for ((gr, hr), dr) in grad
            .data()
            .chunks(c)
            .zip(cache.xhat.data().chunks(c))
            .zip(dx.data_mut().chunks_mut(c))
        {
            for i in 0..c {
                let g = gr[i].as_f64();
                let scale = gamma[i] * cache.inv_std[i];
                let d = match cache.mode {
                    Mode::Eval => g * scale,
                    Mode::Train => {
                        scale * (g - sum_g[i] / count - hr[i].as_f64() * sum_gx[i] / count)
                    }
                };
                dr[i] = F::from_f64(d);
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<F>> {
        vec![
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_standardises_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::from_fn([4, 3, 3, 2], |i| {
            rng.gen_range(-2.0..5.0) * (i[3] + 1) as f64
        });
        let mut bn = BatchNorm::<f64>::new("bn", 2);
        let y = bn.forward(&x, &mut Ctx::train(0)).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(2).copied().collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
        // running stats moved 10% of the way towards the batch statistics
        assert!(bn.running_mean.value.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn eval_mode_with_unit_running_stats_is_near_identity() {
        let x = Tensor4::from_fn([1, 2, 2, 3], |i| (i[1] + i[2] * 2 + i[3]) as f64 - 1.5);
        let mut bn = BatchNorm::<f64>::new("bn", 3);
        let y = bn.forward(&x, &mut Ctx::eval()).unwrap();
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * k).abs() < 1e-15);
        }
    }

    #[test]
    fn single_sample_train_batch_is_rejected() {
        let mut bn = BatchNorm::<f64>::new("bn", 1);
        assert!(bn
            .forward(&Tensor4::zeros([1, 4, 4, 1]), &mut Ctx::train(0))
            .is_err());
        assert!(bn
            .forward(&Tensor4::zeros([1, 4, 4, 1]), &mut Ctx::eval())
            .is_ok());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::<f64>::new("bn", 1);
        let x = Tensor4::from_vec([2, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, &mut Ctx::train(0)).unwrap();
        assert!((bn.running_mean.value[0] - 0.2).abs() < 1e-15);
        // unbiased variance of {1, 3} is 2
        assert!((bn.running_var.value[0] - (0.9 + 0.2)).abs() < 1e-15);
    }
}
