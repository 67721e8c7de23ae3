use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::EyePolicy;
use crate::error::{FlameError, Result};
use crate::loss::LossKind;
use crate::model::{ModelSpec, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = FlameError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(FlameError::Config(format!(
                "unknown precision `{other}` (expected f32 or f64)"
            ))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub eval_eye: EyePolicy,
    pub precision: Precision,
    /// Side of the eye patch cut from the face crop before downscaling.
    pub patch_size: usize,
    /// Forces serial batch preparation; with it off the next batch is built
    /// on a second thread during the optimizer step (results are identical
    /// either way).
    pub deterministic: bool,
    /// Stop once the eval-mode mean error on the training set falls below
    /// this many degrees (checked every epoch when set).
    pub stop_below_train_deg: Option<f64>,
}

impl TrainConfig {
    pub fn new(model: ModelSpec) -> Self {
        TrainConfig {
            model,
            epochs: 200,
            batch_size: 8,
            lr: 1e-4,
            lr_milestones: vec![85, 120, 175],
            lr_factor: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: LossKind::Vector,
            eval_eye: EyePolicy::Both,
            precision: Precision::F32,
            patch_size: 120,
            deterministic: true,
            stop_below_train_deg: None,
        }
    }

    pub fn variant(&self) -> Variant {
        self.model.variant
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FlameError::Config(m));
        self.model.validate()?;
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size {} must be >= 2 (batch normalisation)",
                self.batch_size
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "lr_milestones {:?} must be strictly increasing",
                self.lr_milestones
            ));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor {} not in (0, 1)", self.lr_factor));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0)
        {
            return bad("Adam betas must be in [0, 1) and eps positive".into());
        }
        if self.patch_size < self.model.resolution {
            return bad(format!(
                "patch_size {} smaller than resolution {}",
                self.patch_size, self.model.resolution
            ));
        }
        Ok(())
    }
}

/// Learning rate for a 0-based epoch: every milestone `m` with `m < epoch`
/// has multiplied the rate by `lr_factor`, so a drop takes effect from the
/// epoch after its milestone.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let k = cfg.lr_milestones.iter().filter(|&&m| m < epoch).count();
    cfg.lr * cfg.lr_factor.powi(k as i32)
}
