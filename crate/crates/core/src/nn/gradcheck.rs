//! Central finite-difference verification of analytic gradients.
//!
//! A step that flips any ReLU mask or pooling winner relative to the
//! unperturbed pass is reported as a kink and excluded from the error
//! statistic; the forward trace in [`Ctx`] detects those.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FlameError, Result};

use super::{Ctx, Layer, Param, Tensor4};

/// Something with inputs and parameters whose scalar loss can be
/// differentiated analytically.
pub trait GradCheckTarget {
    fn inputs_mut(&mut self) -> Vec<&mut Tensor4<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Param<f64>>;
    /// Forward pass to a scalar; must prime `backward`.
    fn loss(&mut self, ctx: &mut Ctx) -> Result<f64>;
    /// Gradients of the last loss w.r.t. each input, in `inputs_mut` order.
    /// Parameter gradients are accumulated into the params.
    fn backward(&mut self) -> Result<Vec<Tensor4<f64>>>;
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates sampled per tensor; tensors at most this large are
    /// checked exhaustively.
    pub coords_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            coords_per_tensor: 24,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Steps skipped because they crossed a non-differentiable point.
    pub kinks: usize,
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.kinks += other.kinks;
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn pick(len: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= k {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, k).into_vec();
        v.sort_unstable();
        v
    }
}

enum Slot {
    Input(usize),
    Param(usize),
}

/// Compares analytic gradients of `target` with central differences.
/// `ctx` is cloned for every evaluation so stochastic layers see identical
/// random draws.
pub fn finite_difference_check(
    target: &mut dyn GradCheckTarget,
    ctx: &Ctx,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    for p in target.params_mut() {
        p.zero_grad();
    }
    let mut base_ctx = ctx.clone().with_trace();
    let base = target.loss(&mut base_ctx)?;
    if !base.is_finite() {
        return Err(FlameError::NonFinite(format!("gradient-check loss {base}")));
    }
    let signature = base_ctx.trace_value();
    let input_grads = target.backward()?;
    let param_grads: Vec<(String, Vec<f64>, bool)> = target
        .params_mut()
        .into_iter()
        .map(|p| (p.name.clone(), p.grad.clone(), p.trainable))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut plan: Vec<(Slot, usize, f64, String)> = Vec::new();
    for (i, g) in input_grads.iter().enumerate() {
        for k in pick(g.len(), cfg.coords_per_tensor, &mut rng) {
            plan.push((Slot::Input(i), k, g.data()[k], format!("input{i}[{k}]")));
        }
    }
    for (i, (name, g, trainable)) in param_grads.iter().enumerate() {
        if !trainable {
            continue;
        }
        for k in pick(g.len(), cfg.coords_per_tensor, &mut rng) {
            plan.push((Slot::Param(i), k, g[k], format!("{name}[{k}]")));
        }
    }

    let mut report = GradCheckReport::default();
    for (slot, k, analytic, label) in plan {
        let eval_at =
            |delta: f64, target: &mut dyn GradCheckTarget| -> Result<(f64, Option<u64>)> {
                let original = {
                    let v = coord(target, &slot, k);
                    let o = *v;
                    *v = o + delta;
                    o
                };
                let mut c = ctx.clone().with_trace();
                let l = target.loss(&mut c);
                *coord(target, &slot, k) = original;
                Ok((l?, c.trace_value()))
            };
        let (lp, sp) = eval_at(cfg.step, target)?;
        let (lm, sm) = eval_at(-cfg.step, target)?;
        if sp != signature || sm != signature {
            report.kinks += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * cfg.step);
        let err = relative_error(analytic, numeric, cfg.floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            report.worst = Some(format!(
                "{label}: analytic {analytic:e}, numeric {numeric:e}"
            ));
        }
    }
    Ok(report)
}

fn coord<'a>(target: &'a mut dyn GradCheckTarget, slot: &Slot, k: usize) -> &'a mut f64 {
    match *slot {
        Slot::Input(i) => &mut target
            .inputs_mut()
            .into_iter()
            .nth(i)
            .expect("input index")
            .data_mut()[k],
        Slot::Param(i) => {
            &mut target
                .params_mut()
                .into_iter()
                .nth(i)
                .expect("param index")
                .value[k]
        }
    }
}

/// Fixed random readout `sum_i w_i y_i`, used to turn tensor outputs into a
/// scalar with a dense, generic upstream gradient.
#[derive(Debug, Clone)]
pub struct Readout {
    seed: u64,
    weights: Vec<f64>,
}

impl Readout {
    pub fn new(seed: u64) -> Self {
        Readout {
            seed,
            weights: Vec::new(),
        }
    }

    pub fn apply(&mut self, y: &Tensor4<f64>) -> f64 {
        if self.weights.len() != y.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            self.weights = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        }
        y.data().iter().zip(&self.weights).map(|(a, b)| a * b).sum()
    }

    pub fn grad(&self, shape: [usize; 4]) -> Result<Tensor4<f64>> {
        Tensor4::from_vec(shape, self.weights.clone())
    }
}

/// Adapter checking a single-input [`Layer`] through a [`Readout`].
pub struct LayerCheck<L> {
    pub layer: L,
    pub input: Tensor4<f64>,
    readout: Readout,
    out_shape: [usize; 4],
}

impl<L: Layer<f64>> LayerCheck<L> {
    pub fn new(layer: L, input: Tensor4<f64>, seed: u64) -> Self {
        LayerCheck {
            layer,
            input,
            readout: Readout::new(seed),
            out_shape: [0; 4],
        }
    }
}

impl<L: Layer<f64>> GradCheckTarget for LayerCheck<L> {
    fn inputs_mut(&mut self) -> Vec<&mut Tensor4<f64>> {
        vec![&mut self.input]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.layer.params_mut()
    }

    fn loss(&mut self, ctx: &mut Ctx) -> Result<f64> {
        let y = self.layer.forward(&self.input, ctx)?;
        self.out_shape = y.shape();
        Ok(self.readout.apply(&y))
    }

    fn backward(&mut self) -> Result<Vec<Tensor4<f64>>> {
        let g = self.readout.grad(self.out_shape)?;
        Ok(vec![self.layer.backward(&g)?])
    }
}

/// Seeded input in `[-1, 1)` with every entry at least `margin` away from zero.
pub fn jittered_input(shape: [usize; 4], seed: u64, margin: f64) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(margin..1.0);
        if rng.gen::<bool>() {
            v
        } else {
            -v
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{
        BatchNorm, Conv2d, Dense, Dropout, GlobalAvgPool, MaxPool2x2, Relu, ResidualBlock,
    };

    const TOL: f64 = 1e-4;

    fn check<L: Layer<f64>>(layer: L, shape: [usize; 4], ctx: Ctx) -> GradCheckReport {
        let mut t = LayerCheck::new(layer, jittered_input(shape, 5, 1e-3), 9);
        let r = finite_difference_check(&mut t, &ctx, &GradCheckConfig::default()).unwrap();
        assert!(r.passed(TOL), "{r:?}");
        r
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(4)
    }

    #[test]
    fn dense_gradients() {
        let r = check(
            Dense::new("d", 12, 5, &mut rng()),
            [3, 2, 2, 3],
            Ctx::eval(),
        );
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn conv_gradients() {
        let r = check(
            Conv2d::new("c", 3, 4, 3, 1, 1, true, &mut rng()),
            [2, 5, 5, 3],
            Ctx::eval(),
        );
        assert!(r.max_rel_error < 1e-5, "{r:?}");
        check(
            Conv2d::new("c", 2, 3, 3, 2, 0, false, &mut rng()),
            [2, 7, 6, 2],
            Ctx::eval(),
        );
        check(
            Conv2d::new("c", 3, 2, 1, 1, 0, true, &mut rng()),
            [2, 3, 3, 3],
            Ctx::eval(),
        );
    }

    #[test]
    fn batch_norm_gradients() {
        let mut bn = BatchNorm::new("bn", 3);
        bn.gamma.value = vec![0.7, 1.3, -0.4];
        bn.beta.value = vec![0.1, -0.2, 0.3];
        check(bn, [2, 4, 4, 3], Ctx::train(0));
        let mut bn = BatchNorm::new("bn", 3);
        bn.running_var.value = vec![0.5, 2.0, 1.5];
        check(bn, [2, 4, 4, 3], Ctx::eval());
    }

    #[test]
    fn pointwise_and_pool_gradients() {
        check(Relu::new(), [2, 3, 3, 2], Ctx::eval());
        check(MaxPool2x2::new(), [2, 5, 4, 2], Ctx::eval());
        check(GlobalAvgPool::new(), [2, 3, 4, 2], Ctx::eval());
        check(Dropout::new(0.3).unwrap(), [2, 3, 3, 2], Ctx::train(3));
    }

    #[test]
    fn residual_block_gradients() {
        check(
            ResidualBlock::new("r", 3, 3, &mut rng()),
            [2, 4, 4, 3],
            Ctx::train(0),
        );
        check(
            ResidualBlock::new("r", 2, 4, &mut rng()),
            [2, 4, 4, 2],
            Ctx::train(0),
        );
    }

    #[test]
    fn kinks_are_skipped_not_counted() {
        // Inputs exactly at the ReLU kink: every step flips the mask.
        let mut t = LayerCheck::new(Relu::new(), Tensor4::zeros([1, 2, 2, 1]), 1);
        let r = finite_difference_check(&mut t, &Ctx::eval(), &GradCheckConfig::default()).unwrap();
        assert_eq!(r.kinks, 4);
        assert_eq!(r.checked, 0);
        assert!(!r.passed(TOL));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        struct Broken(Tensor4<f64>);
        impl GradCheckTarget for Broken {
            fn inputs_mut(&mut self) -> Vec<&mut Tensor4<f64>> {
                vec![&mut self.0]
            }
            fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
                Vec::new()
            }
            fn loss(&mut self, _: &mut Ctx) -> Result<f64> {
                Ok(self.0.data().iter().map(|v| v * v).sum())
            }
            fn backward(&mut self) -> Result<Vec<Tensor4<f64>>> {
                Ok(vec![self.0.map(|v| 3.0 * v)])
            }
        }
        let mut b = Broken(jittered_input([1, 1, 1, 4], 0, 0.1));
        let r = finite_difference_check(&mut b, &Ctx::eval(), &GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error > 0.3);
    }
}
