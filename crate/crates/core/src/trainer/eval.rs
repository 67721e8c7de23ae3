use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{
    assemble_batch, make_sample, Eye, EyeChoice, EyePolicy, Record, Sample, SampleConfig,
};
use crate::error::Result;
use crate::geometry::{
    angles_to_vector, angular_error, direction_from_angles, GazeAngles, GazeVector,
};
use crate::model::{GazeModel, Variant};
use crate::nn::{Ctx, Element};

pub const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub image_id: String,
    pub subject_id: String,
    pub eye: Eye,
    pub truth: GazeAngles,
    pub prediction: GazeAngles,
    pub error_deg: f64,
}

/// Per-sample angular errors and their summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub resolution: usize,
    pub policy: EyePolicy,
    pub mean_deg: f64,
    /// Population standard deviation.
    pub std_deg: f64,
    pub samples: Vec<SampleError>,
    pub per_subject: BTreeMap<String, f64>,
    /// Samples that could not be scored, with the reason.
    pub flagged: Vec<(String, String)>,
}

impl EvalReport {
    pub fn from_samples(
        variant: Variant,
        resolution: usize,
        policy: EyePolicy,
        samples: Vec<SampleError>,
        flagged: Vec<(String, String)>,
    ) -> Self {
        let (mean_deg, std_deg) = mean_std(samples.iter().map(|s| s.error_deg));
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for s in &samples {
            groups
                .entry(s.subject_id.clone())
                .or_default()
                .push(s.error_deg);
        }
        let per_subject = groups
            .into_iter()
            .map(|(k, v)| (k, mean_std(v.into_iter()).0))
            .collect();
        EvalReport {
            variant,
            resolution,
            policy,
            mean_deg,
            std_deg,
            samples,
            per_subject,
            flagged,
        }
    }
}

/// Mean and population standard deviation; NaN for an empty input.
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn sample_config(
    model_resolution: usize,
    heatmap_scale: f64,
    patch_size: usize,
) -> SampleConfig {
    SampleConfig {
        resolution: model_resolution,
        patch_size,
        heatmap_scale,
    }
}

/// Eval-mode predictions for a list of samples.
pub fn predict<F: Element>(
    model: &mut GazeModel<F>,
    samples: &[Sample],
) -> Result<Vec<GazeAngles>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let (input, _) = assemble_batch::<F>(chunk)?;
        let y = model.forward(&input, &mut Ctx::eval())?;
        for b in 0..chunk.len() {
            let s = y.sample(b);
            out.push(GazeAngles::new(s[0].as_f64(), s[1].as_f64()));
        }
    }
    Ok(out)
}

/// Scores `records` under `policy`. Samples whose error cannot be computed
/// are flagged rather than aborting the evaluation.
pub fn evaluate<F: Element>(
    model: &mut GazeModel<F>,
    records: &[Record],
    policy: EyePolicy,
    seed: u64,
    patch_size: usize,
) -> Result<EvalReport> {
    let spec = model.spec().clone();
    let cfg = sample_config(spec.resolution, spec.heatmap_scale, patch_size);
    let mut errors = Vec::new();
    let mut flagged = Vec::new();
    let choices = policy.choices(seed);
    for chunk in records.chunks(EVAL_BATCH) {
        let mut samples = Vec::with_capacity(chunk.len() * choices.len());
        for r in chunk {
            for &c in &choices {
                samples.push(make_sample(r, c, &cfg)?);
            }
        }
        let preds = predict(model, &samples)?;
        for (s, p) in samples.iter().zip(preds) {
            let scored = angles_to_vector(s.gaze).and_then(|t| {
                let [x, y, z] = direction_from_angles(p.pitch, p.yaw);
                angular_error(GazeVector::new(x, y, z), t)
            });
            match scored {
                Ok(e) if e.is_finite() => errors.push(SampleError {
                    image_id: s.image_id.clone(),
                    subject_id: s.subject_id.clone(),
                    eye: s.eye,
                    truth: s.gaze,
                    prediction: p,
                    error_deg: e,
                }),
                Ok(e) => flagged.push((s.image_id.clone(), format!("non-finite error {e}"))),
                Err(e) => flagged.push((s.image_id.clone(), e.to_string())),
            }
        }
    }
    Ok(EvalReport::from_samples(
        spec.variant,
        spec.resolution,
        policy,
        errors,
        flagged,
    ))
}

/// Eye choice for a record in a given training epoch.
pub fn epoch_eye(seed: u64, epoch: usize) -> EyeChoice {
    EyeChoice::Random(super::mix(seed, epoch as u64, 0x65_79_65))
}
