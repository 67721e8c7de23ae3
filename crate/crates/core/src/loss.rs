//! Training objectives on the network's (pitch, yaw) output. Both losses are
//! averaged over the batch and differentiated with respect to the raw angles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FlameError, Result};
use crate::geometry::{direction_from_angles, GazeVector};
use crate::nn::{Element, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Squared difference of gaze vectors.
    #[default]
    Vector,
    /// Angle between predicted and true gaze, in radians.
    Angular,
}

impl FromStr for LossKind {
    type Err = FlameError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vector" => Ok(LossKind::Vector),
            "angular" => Ok(LossKind::Angular),
            other => Err(FlameError::Config(format!(
                "unknown loss `{other}` (expected vector or angular)"
            ))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Vector => "vector",
            LossKind::Angular => "angular",
        })
    }
}

/// Partial derivatives of the unit gaze direction with respect to pitch and yaw.
fn direction_jacobian(pitch: f64, yaw: f64) -> ([f64; 3], [f64; 3]) {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    ([sp * sy, -cp, sp * cy], [-cp * cy, 0.0, cp * sy])
}

/// Loss of one prediction and its gradient with respect to (pitch, yaw).
pub fn sample_loss(
    kind: LossKind,
    pitch: f64,
    yaw: f64,
    target: &GazeVector,
) -> Result<(f64, [f64; 2])> {
    let g = direction_from_angles(pitch, yaw);
    let t = target.as_array();
    let (dp, dy) = direction_jacobian(pitch, yaw);
    let dot = |a: &[f64; 3], b: &[f64; 3]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    match kind {
        LossKind::Vector => {
            let d = [g[0] - t[0], g[1] - t[1], g[2] - t[2]];
            Ok((dot(&d, &d), [2.0 * dot(&d, &dp), 2.0 * dot(&d, &dy)]))
        }
        LossKind::Angular => {
            let unit = target.normalized()?.as_array();
            let x = dot(&g, &unit).clamp(-1.0, 1.0);
            let slope = -1.0 / (1.0 - x * x).sqrt();
            if !slope.is_finite() {
                return Err(FlameError::NonFinite(format!(
                    "angular loss gradient at cosine {x}"
                )));
            }
            Ok((x.acos(), [slope * dot(&unit, &dp), slope * dot(&unit, &dy)]))
        }
    }
}

/// Batch-mean loss of `N x 1 x 1 x 2` predictions and its gradient.
pub fn batch_loss<F: Element>(
    kind: LossKind,
    pred: &Tensor4<F>,
    targets: &[GazeVector],
) -> Result<(f64, Tensor4<F>)> {
    let n = pred.batch();
    pred.expect_shape([n, 1, 1, 2], "gaze prediction")?;
    if targets.len() != n || n == 0 {
        return Err(FlameError::shape(format!(
            "{} targets for a batch of {n}",
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(2 * n);
    for (b, t) in targets.iter().enumerate() {
        let s = pred.sample(b);
        let (l, g) = sample_loss(kind, s[0].as_f64(), s[1].as_f64(), t)?;
        total += l;
        grad.extend(g.iter().map(|&v| F::from_f64(v / n as f64)));
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(FlameError::NonFinite(format!("{kind} loss {loss}")));
    }
    Ok((loss, Tensor4::from_vec([n, 1, 1, 2], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angles_to_vector, angular_error, vector_loss, GazeAngles};

    fn numeric(kind: LossKind, p: f64, y: f64, t: &GazeVector) -> [f64; 2] {
        let h = 1e-6;
        let f = |p, y| sample_loss(kind, p, y, t).unwrap().0;
        [
            (f(p + h, y) - f(p - h, y)) / (2.0 * h),
            (f(p, y + h) - f(p, y - h)) / (2.0 * h),
        ]
    }

    #[test]
    fn values_match_geometry() {
        let t = angles_to_vector(GazeAngles::new(0.1, -0.3)).unwrap();
        let (p, y) = (0.25, 0.2);
        let pv = angles_to_vector(GazeAngles::new(p, y)).unwrap();
        let (lv, _) = sample_loss(LossKind::Vector, p, y, &t).unwrap();
        assert!((lv - vector_loss(pv, t)).abs() < 1e-15);
        let (la, _) = sample_loss(LossKind::Angular, p, y, &t).unwrap();
        assert!((la.to_degrees() - angular_error(pv, t).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let t = angles_to_vector(GazeAngles::new(-0.2, 0.4))
            .unwrap()
            .scale(3.0);
        for kind in [LossKind::Vector, LossKind::Angular] {
            for &(p, y) in &[(0.1, 0.2), (-0.5, 1.0), (0.3, -0.7)] {
                let (_, g) = sample_loss(kind, p, y, &t).unwrap();
                let n = numeric(kind, p, y, &t);
                for k in 0..2 {
                    assert!(
                        (g[k] - n[k]).abs() < 1e-7 * n[k].abs().max(1.0),
                        "{kind} {g:?} {n:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn batch_mean_and_errors() {
        let t = vec![GazeVector::new(0.0, 0.0, -1.0); 2];
        let pred = Tensor4::from_vec([2, 1, 1, 2], vec![0.0f64, 0.0, 0.2, 0.1]).unwrap();
        let (l, g) = batch_loss(LossKind::Vector, &pred, &t).unwrap();
        let (l1, g1) = sample_loss(LossKind::Vector, 0.2, 0.1, &t[1]).unwrap();
        assert!((l - l1 / 2.0).abs() < 1e-15);
        assert_eq!(g.data()[0], 0.0);
        assert!((g.data()[2] - g1[0] / 2.0).abs() < 1e-15);
        assert!(batch_loss(LossKind::Vector, &pred, &t[..1]).is_err());
        let bad = Tensor4::from_vec([1, 1, 1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(batch_loss(LossKind::Vector, &bad, &t[..1]).is_err());
    }

    #[test]
    fn angular_loss_refuses_exact_match() {
        let t = GazeVector::new(0.0, 0.0, -1.0);
        assert!(sample_loss(LossKind::Angular, 0.0, 0.0, &t).is_err());
        assert_eq!("Angular".parse::<LossKind>().unwrap(), LossKind::Angular);
    }
}
