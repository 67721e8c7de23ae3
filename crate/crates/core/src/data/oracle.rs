use nalgebra::{DMatrix, DVector};

use crate::error::{FlameError, Result};
use crate::geometry::{angles_to_vector, angular_error, GazeAngles};
use crate::heatmap::{eye_center, LandmarkSet, PUPIL};

use super::record::{Eye, Record};

/// Pupil offset from the eye center in units of the eye's half-width,
/// measured from landmarks alone.
pub fn pupil_offset(lm: &LandmarkSet) -> (f64, f64) {
    let (cx, cy) = eye_center(lm);
    let n = PUPIL.len() as f64;
    let (px, py) = PUPIL.fold((0.0, 0.0), |(x, y), i| {
        (x + lm.get(i)[0] / n, y + lm.get(i)[1] / n)
    });
    let (a, b) = (lm.get(8), lm.get(14));
    let half = 0.5 * ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    ((px - cx) / half, (py - cy) / half)
}

fn features(o: (f64, f64)) -> [f64; 10] {
    let (x, y) = o;
    [
        1.0,
        x,
        y,
        x * x,
        x * y,
        y * y,
        x * x * x,
        x * x * y,
        x * y * y,
        y * y * y,
    ]
}

/// Cubic least-squares map from pupil offset to (pitch, yaw). It sees no
/// pixels, only landmarks, so it checks that gaze is recoverable from the
/// data independently of the network.
#[derive(Debug, Clone)]
pub struct PupilOracle {
    pitch: DVector<f64>,
    yaw: DVector<f64>,
}

impl PupilOracle {
    pub fn fit(records: &[Record], eye: Eye) -> Result<Self> {
        let k = features((0.0, 0.0)).len();
        if records.len() < k {
            return Err(FlameError::Config(format!(
                "oracle fit needs at least {k} records"
            )));
        }
        let rows: Vec<[f64; 10]> = records
            .iter()
            .map(|r| features(pupil_offset(r.landmarks(eye))))
            .collect();
        let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        let svd = x.svd(true, true);
        let solve = |t: DVector<f64>| {
            svd.solve(&t, 1e-12)
                .map_err(|e| FlameError::Degenerate(format!("least squares: {e}")))
        };
        Ok(PupilOracle {
            pitch: solve(DVector::from_iterator(
                records.len(),
                records.iter().map(|r| r.gaze.pitch),
            ))?,
            yaw: solve(DVector::from_iterator(
                records.len(),
                records.iter().map(|r| r.gaze.yaw),
            ))?,
        })
    }

    pub fn predict(&self, lm: &LandmarkSet) -> GazeAngles {
        let f = DVector::from_row_slice(&features(pupil_offset(lm)));
        GazeAngles::new(self.pitch.dot(&f), self.yaw.dot(&f))
    }

    /// Mean angular error in degrees over `records`.
    pub fn mean_error(&self, records: &[Record], eye: Eye) -> Result<f64> {
        let mut total = 0.0;
        for r in records {
            let p = angles_to_vector(self.predict(r.landmarks(eye)))?;
            total += angular_error(p, angles_to_vector(r.gaze)?)?;
        }
        Ok(total / records.len().max(1) as f64)
    }
}
