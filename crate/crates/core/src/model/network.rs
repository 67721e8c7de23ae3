use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FlameError, Result};
use crate::fusion::{aggregate_additive, ConcatResidual, TransferFunction};
use crate::heatmap::NUM_LANDMARKS;
use crate::nn::{
    BatchNorm, Ctx, Dense, Dropout, Element, HasParams, Layer, Param, Relu, Sequential, Tensor4,
};

use super::spec::{Aggregation, ModelSpec, COORD_FEATURES, POSE_FEATURES};
use super::Backbone;

/// One batch of network inputs. Every variant takes the same batch; each
/// reads only the modalities it uses.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<F> {
    /// `N x R x R x 3`, values in [0, 1].
    pub rgb: Tensor4<F>,
    /// `N x R x R x 28`.
    pub heatmap: Tensor4<F>,
    /// `N x 1 x 1 x 2`: head pitch, yaw in radians.
    pub pose: Tensor4<F>,
    /// `N x 1 x 1 x 56`: landmark coordinates `x0, y0, x1, y1, ...`.
    pub landmarks: Tensor4<F>,
}

impl<F: Element> ModelInput<F> {
    pub fn batch(&self) -> usize {
        self.rgb.batch()
    }

    pub fn validate(&self, resolution: usize) -> Result<()> {
        let n = self.batch();
        self.rgb
            .expect_shape([n, resolution, resolution, 3], "rgb input")?;
        self.heatmap
            .expect_shape([n, resolution, resolution, NUM_LANDMARKS], "heatmap input")?;
        self.pose
            .expect_shape([n, 1, 1, POSE_FEATURES], "head pose input")?;
        self.landmarks
            .expect_shape([n, 1, 1, COORD_FEATURES], "landmark input")?;
        Ok(())
    }
}

/// Gradients with respect to the model inputs (zero where a modality is
/// unused or input gradients are disabled).
#[derive(Debug, Clone)]
pub struct InputGrads<F> {
    pub rgb: Tensor4<F>,
    pub heatmap: Tensor4<F>,
    pub pose: Tensor4<F>,
    pub landmarks: Tensor4<F>,
}

enum Aggregator<F> {
    Concat(ConcatResidual<F>),
    Additive,
    None,
}

struct ForwardCache {
    batch: usize,
    feature_shape: [usize; 4],
    flat_width: usize,
    coord_width: usize,
}

/// Gaze regressor for every variant: backbones, optional transfer function
/// and aggregation, optional coordinate branch, and the dense head ending in
/// a linear (pitch, yaw) output.
pub struct GazeModel<F> {
    spec: ModelSpec,
    pub rgb: Backbone<F>,
    pub heatmap: Option<Backbone<F>>,
    pub transfer: Option<TransferFunction<F>>,
    aggregator: Aggregator<F>,
    pub coords: Option<Sequential<F>>,
    pub head: Sequential<F>,
    cache: Option<ForwardCache>,
}

impl<F: Element> GazeModel<F> {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let v = spec.variant;
        let rgb = Backbone::new("rgb", 3, &spec.channels, spec.blocks_per_module, &mut rng);
        let heatmap = v.uses_heatmap().then(|| {
            Backbone::new(
                "heatmap",
                NUM_LANDMARKS,
                &spec.channels,
                spec.blocks_per_module,
                &mut rng,
            )
        });
        let transfer = v.uses_transfer().then(|| {
            let mut tf = TransferFunction::new(
                "transfer",
                &spec.channels[1..],
                spec.mmtm_z_activation,
                &mut rng,
            );
            if spec.mmtm_zero_init {
                tf.zero_excitation();
            }
            tf
        });
        let last = *spec.channels.last().expect("validated");
        let aggregator = match v.aggregation() {
            Aggregation::Concat => Aggregator::Concat(ConcatResidual::new(
                "aggregate",
                last,
                last,
                spec.hybrid_width,
                &mut rng,
            )),
            Aggregation::Additive => Aggregator::Additive,
            Aggregation::None => Aggregator::None,
        };
        let coords = v.uses_coordinates().then(|| {
            let mut seq = Sequential::new();
            seq.push(Dense::new(
                "coords.input",
                COORD_FEATURES,
                spec.coord_input_width,
                &mut rng,
            ));
            seq.push(Relu::new());
            let mut width = spec.coord_input_width;
            for (m, &w) in spec.coord_widths.iter().enumerate() {
                for l in 0..spec.coord_layers_per_module {
                    let name = format!("coords.module{m}.fc{l}");
                    seq.push(Dense::new(&name, width, w, &mut rng));
                    seq.push(BatchNorm::new(&format!("{name}.bn"), w));
                    seq.push(Relu::new());
                    width = w;
                }
            }
            seq
        });
        let mut head = Sequential::new();
        let mut width = spec.head_input_width();
        for (i, &w) in spec.head_widths.iter().enumerate() {
            head.push(Dense::new(&format!("head.fc{i}"), width, w, &mut rng));
            head.push(Relu::new());
            head.push(Dropout::new(spec.dropout)?);
            width = w;
        }
        let out = Dense::new("head.out", width, 2, &mut rng);
        head.push(if spec.zero_output_init {
            out.zero_init()
        } else {
            out
        });
        Ok(GazeModel {
            spec,
            rgb,
            heatmap,
            transfer,
            aggregator,
            coords,
            head,
            cache: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Enables gradients with respect to the raw inputs (off by default
    /// because training never needs them).
    pub fn set_input_gradients(&mut self, enabled: bool) {
        self.rgb.set_input_gradient(enabled);
        if let Some(h) = self.heatmap.as_mut() {
            h.set_input_gradient(enabled);
        }
    }

    pub fn concat_aggregator(&mut self) -> Option<&mut ConcatResidual<F>> {
        match &mut self.aggregator {
            Aggregator::Concat(a) => Some(a),
            _ => None,
        }
    }

    /// Returns `N x 1 x 1 x 2` predicted (pitch, yaw).
    pub fn forward(&mut self, input: &ModelInput<F>, ctx: &mut Ctx) -> Result<Tensor4<F>> {
        input.validate(self.spec.resolution)?;
        let n = input.batch();
        let mut r = self.rgb.forward_stem(&input.rgb, ctx)?;
        let mut h = match self.heatmap.as_mut() {
            Some(bb) => Some(bb.forward_stem(&input.heatmap, ctx)?),
            None => None,
        };
        for m in 0..self.rgb.modules.len() {
            r = self.rgb.forward_module(m, &r, ctx)?;
            if let (Some(bb), Some(hv)) = (self.heatmap.as_mut(), h.as_ref()) {
                h = Some(bb.forward_module(m, hv, ctx)?);
            }
            if let (Some(tf), Some(hv)) = (self.transfer.as_mut(), h.as_ref()) {
                if let Some(stage) = transfer_stage(m, self.rgb.modules.len()) {
                    let (r2, h2) = tf.stages[stage].forward(&r, hv, ctx)?;
                    r = r2;
                    h = Some(h2);
                }
            }
            guard_finite(&r, "rgb stream")?;
            if let Some(hv) = &h {
                guard_finite(hv, "heatmap stream")?;
            }
        }
        let features = match (&mut self.aggregator, h) {
            (Aggregator::Concat(agg), Some(hv)) => agg.forward(&r, &hv, ctx)?,
            (Aggregator::Additive, Some(hv)) => aggregate_additive(&r, &hv)?,
            (Aggregator::None, _) => r,
            _ => return Err(FlameError::shape("aggregation needs the heatmap stream")),
        };
        let feature_shape = features.shape();
        let flat_width = features.sample_len();
        let mut head_in = features.reshape([n, 1, 1, flat_width])?;
        let mut coord_width = 0;
        if let Some(seq) = self.coords.as_mut() {
            let c = seq.forward(&input.landmarks, ctx)?;
            coord_width = c.channels();
            head_in = Tensor4::concat_channels(&head_in, &c)?;
        }
        head_in = Tensor4::concat_channels(&head_in, &input.pose)?;
        let out = self.head.forward(&head_in, ctx)?;
        guard_finite(&out, "gaze output")?;
        self.cache = Some(ForwardCache {
            batch: n,
            feature_shape,
            flat_width,
            coord_width,
        });
        Ok(out)
    }

    /// Backpropagates `grad` (`N x 1 x 1 x 2`) through the last forward pass.
    pub fn backward(&mut self, grad: &Tensor4<F>) -> Result<InputGrads<F>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| FlameError::shape("model backward called before forward"))?;
        let n = cache.batch;
        let g_in = self.head.backward(grad)?;
        let (g_flat, rest) = g_in.split_channels(cache.flat_width)?;
        let (g_coord, g_pose) = rest.split_channels(cache.coord_width)?;
        let res = self.spec.resolution;
        let mut g_landmarks = Tensor4::zeros([n, 1, 1, COORD_FEATURES]);
        if let Some(seq) = self.coords.as_mut() {
            g_landmarks = seq.backward(&g_coord)?;
        }
        let g_features = g_flat.reshape(cache.feature_shape)?;
        let (mut gr, mut gh) = match &mut self.aggregator {
            Aggregator::Concat(agg) => {
                let (a, b) = agg.backward(&g_features)?;
                (a, Some(b))
            }
            Aggregator::Additive => (g_features.clone(), Some(g_features)),
            Aggregator::None => (g_features, None),
        };
        let modules = self.rgb.modules.len();
        for m in (0..modules).rev() {
            if let (Some(tf), Some(ghv)) = (self.transfer.as_mut(), gh.as_ref()) {
                if let Some(stage) = transfer_stage(m, modules) {
                    let (a, b) = tf.stages[stage].backward(&gr, ghv)?;
                    gr = a;
                    gh = Some(b);
                }
            }
            gr = self.rgb.backward_module(m, &gr)?;
            if let (Some(bb), Some(ghv)) = (self.heatmap.as_mut(), gh.as_ref()) {
                gh = Some(bb.backward_module(m, ghv)?);
            }
        }
        let g_rgb = self.rgb.backward_stem(&gr)?;
        let g_heatmap = match (self.heatmap.as_mut(), gh) {
            (Some(bb), Some(ghv)) => bb.backward_stem(&ghv)?,
            _ => Tensor4::zeros([n, res, res, NUM_LANDMARKS]),
        };
        Ok(InputGrads {
            rgb: g_rgb,
            heatmap: g_heatmap,
            pose: g_pose,
            landmarks: g_landmarks,
        })
    }
}

/// Index of the MMTM that follows backbone module `m`, if any: the
/// transfer function sits after the last two modules.
fn transfer_stage(m: usize, modules: usize) -> Option<usize> {
    (m + 2 >= modules).then(|| m + 2 - modules)
}

fn guard_finite<F: Element>(t: &Tensor4<F>, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(FlameError::NonFinite(format!("{what} activations")))
    }
}

impl<F: Element> HasParams<F> for GazeModel<F> {
    fn params(&self) -> Vec<&Param<F>> {
        let mut v = self.rgb.params();
        if let Some(h) = &self.heatmap {
            v.extend(h.params());
        }
        if let Some(t) = &self.transfer {
            v.extend(t.params());
        }
        if let Aggregator::Concat(a) = &self.aggregator {
            v.extend(a.params());
        }
        if let Some(c) = &self.coords {
            v.extend(c.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<F>> {
        let mut v = self.rgb.params_mut();
        if let Some(h) = self.heatmap.as_mut() {
            v.extend(h.params_mut());
        }
        if let Some(t) = self.transfer.as_mut() {
            v.extend(t.params_mut());
        }
        if let Aggregator::Concat(a) = &mut self.aggregator {
            v.extend(a.params_mut());
        }
        if let Some(c) = self.coords.as_mut() {
            v.extend(c.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::nn::GradCheckConfig;
    use crate::verify::{check_variant, ModelCheck, GRADCHECK_TOLERANCE};

    fn input(n: usize, r: usize) -> ModelInput<f32> {
        ModelInput {
            rgb: Tensor4::from_fn([n, r, r, 3], |[b, y, x, c]| {
                ((b + y * 3 + x * 7 + c) % 11) as f32 / 11.0
            }),
            heatmap: Tensor4::from_fn([n, r, r, NUM_LANDMARKS], |[b, y, x, c]| {
                ((b + y + x + c) % 5) as f32 * 0.03
            }),
            pose: Tensor4::filled([n, 1, 1, 2], 0.1),
            landmarks: Tensor4::filled([n, 1, 1, COORD_FEATURES], 0.5),
        }
    }

    #[test]
    fn every_variant_outputs_pitch_yaw() {
        for v in Variant::ALL {
            for r in [30, 60] {
                let mut m = GazeModel::<f32>::new(ModelSpec::tiny(v, r)).unwrap();
                let y = m.forward(&input(3, r), &mut Ctx::train(1)).unwrap();
                assert_eq!(y.shape(), [3, 1, 1, 2], "{v} at {r}");
                let g = m.backward(&Tensor4::filled([3, 1, 1, 2], 1.0)).unwrap();
                assert_eq!(g.pose.shape(), [3, 1, 1, 2]);
            }
        }
    }

    #[test]
    fn rejects_wrong_resolution() {
        let mut m = GazeModel::<f32>::new(ModelSpec::tiny(Variant::Flame, 60)).unwrap();
        assert!(m.forward(&input(2, 30), &mut Ctx::eval()).is_err());
    }

    #[test]
    fn parameter_names_unique_and_variant_specific() {
        let count = |v| {
            let m = GazeModel::<f32>::new(ModelSpec::tiny(v, 30)).unwrap();
            let mut names: Vec<_> = m.params().iter().map(|p| p.name.clone()).collect();
            let n = names.len();
            names.sort();
            names.dedup();
            assert_eq!(n, names.len(), "{v}");
            names
        };
        assert!(count(Variant::Flame)
            .iter()
            .any(|n| n.starts_with("transfer.mmtm1")));
        assert!(!count(Variant::AggregationOnly)
            .iter()
            .any(|n| n.starts_with("transfer")));
        assert!(!count(Variant::Baseline)
            .iter()
            .any(|n| n.starts_with("heatmap")));
        assert!(count(Variant::DenseFusion)
            .iter()
            .any(|n| n.starts_with("coords.module2")));
        assert!(!count(Variant::AdditiveFusion)
            .iter()
            .any(|n| n.starts_with("aggregate")));
    }

    #[test]
    fn zero_excitation_flame_matches_aggregation_only() {
        // Same seed draws the same backbone weights; the MMTM parameters are
        // drawn after both backbones, so they only shift later layers.
        let mut spec = ModelSpec::tiny(Variant::Flame, 30);
        spec.mmtm_zero_init = true;
        let mut flame = GazeModel::<f64>::new(spec).unwrap();
        let mut ao = GazeModel::<f64>::new(ModelSpec::tiny(Variant::AggregationOnly, 30)).unwrap();
        let flame_params: Vec<_> = flame
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for p in ao.params_mut() {
            if let Some((_, v)) = flame_params.iter().find(|(n, _)| *n == p.name) {
                p.value.clone_from(v);
            }
        }
        let x = input(2, 30);
        let x = ModelInput {
            rgb: x.rgb.cast(),
            heatmap: x.heatmap.cast(),
            pose: x.pose.cast(),
            landmarks: x.landmarks.cast(),
        };
        let a = flame.forward(&x, &mut Ctx::eval()).unwrap();
        let b = ao.forward(&x, &mut Ctx::eval()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flame_gradients_match_finite_differences() {
        let r = check_variant(
            ModelSpec::tiny(Variant::Flame, 30),
            3,
            5,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed(GRADCHECK_TOLERANCE), "{r:?}");
        assert!(r.checked > 100, "{r:?}");
    }

    #[test]
    fn input_gradients_disabled_by_default() {
        let mut m = GazeModel::<f32>::new(ModelSpec::tiny(Variant::Flame, 30)).unwrap();
        m.forward(&input(2, 30), &mut Ctx::train(0)).unwrap();
        let g = m.backward(&Tensor4::filled([2, 1, 1, 2], 1.0)).unwrap();
        assert!(g.rgb.data().iter().all(|&v| v == 0.0));
        let mut c = ModelCheck::new(ModelSpec::tiny(Variant::Flame, 30), 2, 0).unwrap();
        c.model.forward(&c.input, &mut Ctx::train(0)).unwrap();
        let g = c
            .model
            .backward(&Tensor4::filled([2, 1, 1, 2], 1.0))
            .unwrap();
        assert!(g.rgb.data().iter().any(|&v| v != 0.0));
    }
}
