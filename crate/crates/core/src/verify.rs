//! Gradient verification in f64: finite differences against the analytic
//! backward pass of every building block and of every model variant.

use serde::Serialize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FlameError, Result};
use crate::fusion::{ConcatResidual, Mmtm};
use crate::geometry::{angles_to_vector, GazeAngles, GazeVector};
use crate::heatmap::NUM_LANDMARKS;
use crate::loss::{batch_loss, LossKind};
use crate::model::{GazeModel, ModelInput, ModelSpec, Variant, COORD_FEATURES, POSE_FEATURES};
use crate::nn::gradcheck::{jittered_input, LayerCheck, Readout};
use crate::nn::{
    finite_difference_check, BatchNorm, Conv2d, Ctx, Dense, Dropout, GlobalAvgPool,
    GradCheckConfig, GradCheckReport, GradCheckTarget, HasParams, Layer, MaxPool2x2, Param, Relu,
    ResidualBlock, Tensor4,
};

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// A model, a fixed random input batch, and random gaze targets scored
/// with the training loss.
pub struct ModelCheck {
    pub model: GazeModel<f64>,
    pub input: ModelInput<f64>,
    pub targets: Vec<GazeVector>,
    pub loss: LossKind,
    grad: Option<Tensor4<f64>>,
}

impl ModelCheck {
    /// The output layer keeps its random initialisation so every upstream
    /// gradient is nonzero.
    pub fn new(mut spec: ModelSpec, batch: usize, seed: u64) -> Result<Self> {
        spec.zero_output_init = false;
        let r = spec.resolution;
        let mut model = GazeModel::new(spec)?;
        model.set_input_gradients(true);
        let input = ModelInput {
            rgb: jittered_input([batch, r, r, 3], seed, 1e-3).map(|v| 0.5 + 0.5 * v),
            heatmap: jittered_input([batch, r, r, NUM_LANDMARKS], seed + 1, 1e-3)
                .map(|v| 0.08 * v.abs()),
            pose: jittered_input([batch, 1, 1, POSE_FEATURES], seed + 2, 1e-3).map(|v| 0.2 * v),
            landmarks: jittered_input([batch, 1, 1, COORD_FEATURES], seed + 3, 1e-3),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
        let targets = (0..batch)
            .map(|_| {
                angles_to_vector(GazeAngles::new(
                    rng.gen_range(-0.4..0.4),
                    rng.gen_range(-0.5..0.5),
                ))
            })
            .collect::<Result<_>>()?;
        Ok(ModelCheck {
            model,
            input,
            targets,
            loss: LossKind::Vector,
            grad: None,
        })
    }
}

impl GradCheckTarget for ModelCheck {
    fn inputs_mut(&mut self) -> Vec<&mut Tensor4<f64>> {
        let uses_heatmap = self.model.spec().variant.uses_heatmap();
        let uses_coords = self.model.spec().variant.uses_coordinates();
        let mut v = vec![&mut self.input.rgb];
        if uses_heatmap {
            v.push(&mut self.input.heatmap);
        }
        v.push(&mut self.input.pose);
        if uses_coords {
            v.push(&mut self.input.landmarks);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.model.params_mut()
    }

    fn loss(&mut self, ctx: &mut Ctx) -> Result<f64> {
        let y = self.model.forward(&self.input, ctx)?;
        let (loss, grad) = batch_loss(self.loss, &y, &self.targets)?;
        self.grad = Some(grad);
        Ok(loss)
    }

    fn backward(&mut self) -> Result<Vec<Tensor4<f64>>> {
        let g = self
            .grad
            .take()
            .ok_or_else(|| FlameError::shape("backward before loss"))?;
        let grads = self.model.backward(&g)?;
        let v = self.model.spec().variant;
        let mut out = vec![grads.rgb];
        if v.uses_heatmap() {
            out.push(grads.heatmap);
        }
        out.push(grads.pose);
        if v.uses_coordinates() {
            out.push(grads.landmarks);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantCheck {
    pub variant: Variant,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kinks: usize,
    pub worst: Option<String>,
    pub passed: bool,
}

/// Gradient check of one variant in train mode (BatchNorm batch statistics,
/// a fixed dropout mask).
pub fn check_variant(
    spec: ModelSpec,
    batch: usize,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut target = ModelCheck::new(spec, batch, seed)?;
    finite_difference_check(&mut target, &Ctx::train(seed), cfg)
}

/// Checks every variant with the tiny preset at the given resolution.
pub fn gradient_suite(resolution: usize, batch: usize, seed: u64) -> Result<Vec<VariantCheck>> {
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    Variant::ALL
        .iter()
        .map(|&v| {
            let mut spec = ModelSpec::tiny(v, resolution);
            spec.init_seed = seed;
            let r = check_variant(spec, batch, seed, &cfg)?;
            Ok(VariantCheck {
                variant: v,
                passed: r.passed(GRADCHECK_TOLERANCE),
                max_rel_error: r.max_rel_error,
                checked: r.checked,
                kinks: r.kinks,
                worst: r.worst,
            })
        })
        .collect()
}

/// Two-stream block scored through a readout of its (concatenated) output.
struct PairCheck<B> {
    block: B,
    r: Tensor4<f64>,
    h: Tensor4<f64>,
    readout: Readout,
    out: [usize; 4],
}

trait PairBlock {
    fn params_mut(&mut self) -> Vec<&mut Param<f64>>;
    fn forward(
        &mut self,
        r: &Tensor4<f64>,
        h: &Tensor4<f64>,
        ctx: &mut Ctx,
    ) -> Result<Tensor4<f64>>;
    fn backward(&mut self, g: &Tensor4<f64>) -> Result<(Tensor4<f64>, Tensor4<f64>)>;
}

impl PairBlock for Mmtm<f64> {
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        HasParams::params_mut(self)
    }
    fn forward(
        &mut self,
        r: &Tensor4<f64>,
        h: &Tensor4<f64>,
        ctx: &mut Ctx,
    ) -> Result<Tensor4<f64>> {
        let (a, b) = Mmtm::forward(self, r, h, ctx)?;
        Tensor4::concat_channels(&a, &b)
    }
    fn backward(&mut self, g: &Tensor4<f64>) -> Result<(Tensor4<f64>, Tensor4<f64>)> {
        let (gr, gh) = g.split_channels(self.excite_rgb.out_features)?;
        Mmtm::backward(self, &gr, &gh)
    }
}

impl PairBlock for ConcatResidual<f64> {
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        HasParams::params_mut(self)
    }
    fn forward(
        &mut self,
        r: &Tensor4<f64>,
        h: &Tensor4<f64>,
        ctx: &mut Ctx,
    ) -> Result<Tensor4<f64>> {
        ConcatResidual::forward(self, r, h, ctx)
    }
    fn backward(&mut self, g: &Tensor4<f64>) -> Result<(Tensor4<f64>, Tensor4<f64>)> {
        ConcatResidual::backward(self, g)
    }
}

impl<B: PairBlock> GradCheckTarget for PairCheck<B> {
    fn inputs_mut(&mut self) -> Vec<&mut Tensor4<f64>> {
        vec![&mut self.r, &mut self.h]
    }
    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.block.params_mut()
    }
    fn loss(&mut self, ctx: &mut Ctx) -> Result<f64> {
        let y = self.block.forward(&self.r, &self.h, ctx)?;
        self.out = y.shape();
        Ok(self.readout.apply(&y))
    }
    fn backward(&mut self) -> Result<Vec<Tensor4<f64>>> {
        let (gr, gh) = self.block.backward(&self.readout.grad(self.out)?)?;
        Ok(vec![gr, gh])
    }
}

fn pair_check<B: PairBlock>(block: B, r: [usize; 4], h: [usize; 4], seed: u64) -> PairCheck<B> {
    PairCheck {
        block,
        r: jittered_input(r, seed, 1e-3),
        h: jittered_input(h, seed + 1, 1e-3),
        readout: Readout::new(seed + 2),
        out: [0; 4],
    }
}

/// One named gradient check of a building block.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kinks: usize,
    pub worst: Option<String>,
    pub passed: bool,
}

/// Gradient checks of every primitive layer, the residual block (identity
/// and projection shortcuts), both transfer-module widths of the tiny
/// preset, and the concat-residual aggregation block. Train-mode layers use
/// batch statistics and a fixed dropout mask.
pub fn component_suite(seed: u64) -> Result<Vec<ComponentCheck>> {
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = |shape: [usize; 4], k: u64| jittered_input(shape, seed + k, 1e-3);
    let train = Ctx::train(seed);
    let eval = Ctx::eval();
    let mut checks: Vec<(&str, Box<dyn GradCheckTarget>, &Ctx)> = Vec::new();
    fn layer<L: Layer<f64> + 'static>(
        l: L,
        x: Tensor4<f64>,
        seed: u64,
    ) -> Box<dyn GradCheckTarget> {
        Box::new(LayerCheck::new(l, x, seed))
    }
    checks.push((
        "dense",
        layer(Dense::new("d", 7, 5, &mut rng), x([3, 1, 1, 7], 1), seed),
        &eval,
    ));
    checks.push((
        "conv3x3",
        layer(
            Conv2d::new("c", 3, 4, 3, 1, 1, true, &mut rng),
            x([2, 6, 5, 3], 2),
            seed,
        ),
        &eval,
    ));
    checks.push((
        "conv3x3_stride2",
        layer(
            Conv2d::new("c", 3, 4, 3, 2, 1, false, &mut rng),
            x([2, 7, 6, 3], 3),
            seed,
        ),
        &eval,
    ));
    checks.push((
        "conv1x1",
        layer(
            Conv2d::new("c", 4, 6, 1, 1, 0, false, &mut rng),
            x([2, 4, 4, 4], 4),
            seed,
        ),
        &eval,
    ));
    checks.push(("relu", layer(Relu::new(), x([2, 3, 3, 4], 5), seed), &eval));
    checks.push((
        "maxpool2x2",
        layer(MaxPool2x2::new(), x([2, 5, 6, 3], 6), seed),
        &eval,
    ));
    checks.push((
        "global_avg_pool",
        layer(GlobalAvgPool::new(), x([2, 3, 4, 5], 7), seed),
        &eval,
    ));
    checks.push((
        "batchnorm_train",
        layer(BatchNorm::new("bn", 4), x([3, 3, 3, 4], 8), seed),
        &train,
    ));
    checks.push((
        "batchnorm_eval",
        layer(BatchNorm::new("bn", 4), x([3, 3, 3, 4], 9), seed),
        &eval,
    ));
    checks.push((
        "dropout_train",
        layer(Dropout::new(0.3)?, x([3, 1, 1, 8], 10), seed),
        &train,
    ));
    checks.push((
        "residual_block",
        layer(
            ResidualBlock::new("rb", 4, 4, &mut rng),
            x([2, 5, 5, 4], 11),
            seed,
        ),
        &train,
    ));
    checks.push((
        "residual_block_projection",
        layer(
            ResidualBlock::new("rb", 3, 6, &mut rng),
            x([2, 5, 5, 3], 12),
            seed,
        ),
        &train,
    ));
    checks.push((
        "mmtm_16+16",
        Box::new(pair_check(
            Mmtm::new("m", 16, 16, true, &mut rng),
            [2, 4, 4, 16],
            [2, 4, 4, 16],
            seed + 13,
        )),
        &eval,
    ));
    checks.push((
        "mmtm_32+32",
        Box::new(pair_check(
            Mmtm::new("m", 32, 32, true, &mut rng),
            [2, 3, 3, 32],
            [2, 3, 3, 32],
            seed + 16,
        )),
        &eval,
    ));
    checks.push((
        "aggregation_concat_residual",
        Box::new(pair_check(
            ConcatResidual::new("agg", 4, 4, 4, &mut rng),
            [2, 3, 3, 4],
            [2, 3, 3, 4],
            seed + 19,
        )),
        &train,
    ));
    checks
        .into_iter()
        .map(|(name, mut target, ctx)| {
            let r = finite_difference_check(target.as_mut(), ctx, &cfg)?;
            Ok(ComponentCheck {
                name: name.to_string(),
                passed: r.passed(GRADCHECK_TOLERANCE),
                max_rel_error: r.max_rel_error,
                checked: r.checked,
                kinks: r.kinks,
                worst: r.worst,
            })
        })
        .collect()
}
