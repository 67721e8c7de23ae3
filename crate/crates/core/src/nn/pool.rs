use crate::error::{FlameError, Result};

use super::layer::missing_cache;
use super::{Ctx, Element, Layer, Tensor4};

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
#[derive(Default)]
pub struct MaxPool2x2 {
    /// Flat input offset of each output's winner.
    argmax: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        MaxPool2x2 { argmax: None }
    }
}

pub fn pooled_size(n: usize) -> usize {
    n / 2
}

impl<F: Element> Layer<F> for MaxPool2x2 {
    fn forward(&mut self, x: &Tensor4<F>, ctx: &mut Ctx) -> Result<Tensor4<F>> {
        let [n, h, w, c] = x.shape();
        let (ho, wo) = (pooled_size(h), pooled_size(w));
        if ho == 0 || wo == 0 {
            return Err(FlameError::shape(format!(
                "max pool needs at least 2x2 input, got {h}x{w}"
            )));
        }
        let mut out = Tensor4::zeros([n, ho, wo, c]);
        let mut arg = vec![0usize; n * ho * wo * c];
        let data = x.data();
        let mut k = 0;
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        let mut best = x.offset([b, 2 * oy, 2 * ox, ch]);
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let o = x.offset([b, 2 * oy + dy, 2 * ox + dx, ch]);
                            if data[o] > data[best] {
                                best = o;
                            }
                        }
                        out.data_mut()[k] = data[best];
                        arg[k] = best;
                        k += 1;
                    }
                }
            }
        }
        if ctx.tracing() {
            ctx.record(arg.iter().map(|&a| a as u64));
        }
        self.argmax = Some((arg, x.shape()));
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let (arg, shape) = self
            .argmax
            .as_ref()
            .ok_or_else(|| missing_cache("max_pool"))?;
        if grad.len() != arg.len() {
            return Err(FlameError::shape(
                "max_pool backward: gradient size mismatch",
            ));
        }
        let mut dx = Tensor4::zeros(*shape);
        for (&g, &a) in grad.data().iter().zip(arg) {
            dx.data_mut()[a] = dx.data()[a] + g;
        }
        Ok(dx)
    }
}

/// Spatial mean per channel: `N x H x W x C -> N x 1 x 1 x C`.
#[derive(Default)]
pub struct GlobalAvgPool {
    shape: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { shape: None }
    }
}

pub fn global_average_pool<F: Element>(x: &Tensor4<F>) -> Tensor4<F> {
    let [n, h, w, c] = x.shape();
    let area = (h * w) as f64;
    let mut out = Tensor4::zeros([n, 1, 1, c]);
    for b in 0..n {
        let mut acc = vec![0.0f64; c];
        for row in x.sample(b).chunks(c) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v.as_f64();
            }
        }
        for (ch, a) in acc.into_iter().enumerate() {
            out.set([b, 0, 0, ch], F::from_f64(a / area));
        }
    }
    out
}

impl<F: Element> Layer<F> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor4<F>, _ctx: &mut Ctx) -> Result<Tensor4<F>> {
        if x.height() == 0 || x.width() == 0 {
            return Err(FlameError::shape("global average pool of an empty map"));
        }
        self.shape = Some(x.shape());
        Ok(global_average_pool(x))
    }

    fn backward(&mut self, grad: &Tensor4<F>) -> Result<Tensor4<F>> {
        let [n, h, w, c] = self.shape.ok_or_else(|| missing_cache("global_avg_pool"))?;
        grad.expect_shape([n, 1, 1, c], "global_avg_pool backward")?;
        let inv = F::from_f64(1.0 / (h * w) as f64);
        Ok(Tensor4::from_fn([n, h, w, c], |[b, _, _, ch]| {
            grad.at([b, 0, 0, ch]) * inv
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn floor_semantics_on_odd_input() {
        let x = Tensor4::<f64>::from_fn([1, 5, 5, 1], |i| (i[1] * 5 + i[2]) as f64);
        let y = MaxPool2x2::new().forward(&x, &mut Ctx::eval()).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 1]);
        assert_eq!(y.data(), &[6.0, 8.0, 16.0, 18.0]);
    }

    #[test]
    fn pool_backward_routes_to_winner() {
        let x = Tensor4::<f64>::from_vec([1, 2, 2, 1], vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let mut p = MaxPool2x2::new();
        p.forward(&x, &mut Ctx::eval()).unwrap();
        let g = p.backward(&Tensor4::filled([1, 1, 1, 1], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn gap_values() {
        let x = Tensor4::<f64>::filled([2, 3, 4, 2], 1.75);
        assert!(global_average_pool(&x).data().iter().all(|&v| v == 1.75));
        let y = Tensor4::<f64>::from_vec([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_average_pool(&y).data(), &[2.5]);
    }

    #[test]
    fn gap_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor4::<f64>::from_fn([3, 5, 6, 4], |_| rng.gen_range(-3.0..3.0));
        let y = global_average_pool(&x);
        for b in 0..3 {
            for c in 0..4 {
                let mut s = 0.0;
                for p in 0..5 {
                    for q in 0..6 {
                        s += x.at([b, p, q, c]);
                    }
                }
                assert!((y.at([b, 0, 0, c]) - s / 30.0).abs() < 1e-12);
            }
        }
    }
}
