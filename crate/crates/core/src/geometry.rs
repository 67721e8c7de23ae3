//! Gaze representations and the metrics defined on them.
//!
//! Angles are pitch/yaw in radians. The direction convention is
//! `g = (-cos(pitch) sin(yaw), -sin(pitch), -cos(pitch) cos(yaw))`, so the
//! zero gaze looks down the negative z axis. Data generation, training and
//! evaluation all go through the functions here, which keeps every
//! reported angular error independent of the particular axis convention.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{FlameError, Result};

/// Norm below which a vector is treated as having no direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Pitch returned for directions at (or numerically at) a pole.
pub const POLE_PITCH: f64 = FRAC_PI_2 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeAngles {
    pub pitch: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GazeAngles {
    pub fn new(pitch: f64, yaw: f64) -> Self {
        GazeAngles { pitch, yaw }
    }

    pub fn from_degrees(pitch: f64, yaw: f64) -> Self {
        GazeAngles::new(pitch.to_radians(), yaw.to_radians())
    }

    pub fn to_vector(self) -> Result<GazeVector> {
        angles_to_vector(self)
    }
}

impl GazeVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        GazeVector { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &GazeVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn scale(&self, k: f64) -> GazeVector {
        GazeVector::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn normalized(&self) -> Result<GazeVector> {
        let n = self.norm();
        if !(n >= DEGENERATE_NORM) {
            return Err(FlameError::Degenerate(format!(
                "gaze vector norm {n:e} is below {DEGENERATE_NORM:e}"
            )));
        }
        Ok(self.scale(1.0 / n))
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// The direction formula without domain checks. Used by the training loss,
/// where raw network outputs may leave the pitch interval.
pub fn direction_from_angles(pitch: f64, yaw: f64) -> [f64; 3] {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    [-cp * sy, -sp, -cp * cy]
}

pub fn angles_to_vector(a: GazeAngles) -> Result<GazeVector> {
    if !(a.pitch > -FRAC_PI_2 && a.pitch < FRAC_PI_2) {
        return Err(FlameError::Domain(format!(
            "pitch {} outside the open interval (-pi/2, pi/2)",
            a.pitch
        )));
    }
    if !a.yaw.is_finite() {
        return Err(FlameError::Domain(format!("yaw {} is not finite", a.yaw)));
    }
    let [x, y, z] = direction_from_angles(a.pitch, a.yaw);
    Ok(GazeVector { x, y, z })
}

pub fn vector_to_angles(g: GazeVector) -> Result<GazeAngles> {
    let u = g.normalized()?;
    // atan2 stays accurate near the poles where asin(-y) loses half the digits.
    let pitch = (-u.y).atan2(u.x.hypot(u.z)).clamp(-POLE_PITCH, POLE_PITCH);
    // atan2 returns (-pi, pi]; the negated components undo the convention's signs.
    let yaw = if u.x == 0.0 && u.z == 0.0 {
        0.0
    } else {
        (-u.x).atan2(-u.z)
    };
    Ok(GazeAngles { pitch, yaw })
}

/// Angle between predicted and true gaze directions, in degrees.
pub fn angular_error(gp: GazeVector, gt: GazeVector) -> Result<f64> {
    let (np, nt) = (gp.norm(), gt.norm());
    if !(np >= DEGENERATE_NORM && nt >= DEGENERATE_NORM) {
        return Err(FlameError::Degenerate(format!(
            "angular error needs nonzero vectors (norms {np:e}, {nt:e})"
        )));
    }
    let cos = (gp.dot(&gt) / (np * nt)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Sum of squared component differences.
pub fn vector_loss(gp: GazeVector, gt: GazeVector) -> f64 {
    let (dx, dy, dz) = (gp.x - gt.x, gp.y - gt.y, gp.z - gt.z);
    dx * dx + dy * dy + dz * dz
}

/// Magnitude of d(arccos x)/dx. Blows up as the cosine similarity
/// approaches one, i.e. as the angular loss approaches zero.
pub fn angular_grad_magnitude(x: f64) -> Result<f64> {
    if !(x > -1.0 && x < 1.0) {
        return Err(FlameError::Domain(format!(
            "cosine similarity {x} outside (-1, 1)"
        )));
    }
    Ok(1.0 / (1.0 - x * x).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_angles_look_down_negative_z() {
        let g = angles_to_vector(GazeAngles::new(0.0, 0.0)).unwrap();
        assert_eq!(g.as_array(), [-0.0, -0.0, -1.0]);
    }

    #[test]
    fn pitch_near_pole_approaches_negative_y() {
        let g = angles_to_vector(GazeAngles::new(FRAC_PI_2 - 1e-7, 0.0)).unwrap();
        assert!(close(g.y, -1.0, 1e-12));
        assert!(g.x.abs() < 1e-6 && g.z.abs() < 1e-6);
    }

    #[test]
    fn quarter_yaw_points_along_negative_x() {
        let g = angles_to_vector(GazeAngles::new(0.0, FRAC_PI_2)).unwrap();
        assert!(close(g.x, -1.0, 1e-15));
        assert!(close(g.y, 0.0, 1e-15));
        assert!(close(g.z, 0.0, 1e-15));
    }

    #[test]
    fn pitch_outside_interval_is_rejected() {
        assert!(matches!(
            angles_to_vector(GazeAngles::new(FRAC_PI_2, 0.0)),
            Err(FlameError::Domain(_))
        ));
        assert!(angles_to_vector(GazeAngles::new(-2.0, 0.0)).is_err());
        assert!(angles_to_vector(GazeAngles::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn inverse_of_basis_directions() {
        let a = vector_to_angles(GazeVector::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!((a.pitch, a.yaw), (0.0, 0.0));
        let pole = vector_to_angles(GazeVector::new(0.0, -1.0, 0.0)).unwrap();
        assert_eq!(pole.pitch, POLE_PITCH);
        assert!(matches!(
            vector_to_angles(GazeVector::new(0.0, 0.0, 1e-13)),
            Err(FlameError::Degenerate(_))
        ));
    }

    #[test]
    fn round_trip_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v = GazeVector::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() < 1e-3 {
                continue;
            }
            let u = v.normalized().unwrap();
            let back = angles_to_vector(vector_to_angles(v).unwrap()).unwrap();
            for (p, q) in back.as_array().iter().zip(u.as_array()) {
                assert!(close(*p, q, 1e-9), "{back:?} vs {u:?}");
            }
        }
    }

    #[test]
    fn angular_error_basic_cases() {
        let z = GazeVector::new(0.0, 0.0, -1.0);
        assert_eq!(angular_error(z, z).unwrap(), 0.0);
        let ex = GazeVector::new(1.0, 0.0, 0.0);
        let ey = GazeVector::new(0.0, 1.0, 0.0);
        assert!(close(angular_error(ex, ey).unwrap(), 90.0, 1e-12));
        assert_eq!(
            angular_error(GazeVector::new(2.0, 0.0, 0.0), ex).unwrap(),
            0.0
        );
        assert!(angular_error(GazeVector::new(0.0, 0.0, 0.0), ex).is_err());
        assert!(close(
            angular_error(ex, ex.scale(-1.0)).unwrap(),
            180.0,
            1e-12
        ));
    }

    #[test]
    fn vector_loss_basic_cases() {
        let ex = GazeVector::new(1.0, 0.0, 0.0);
        let ey = GazeVector::new(0.0, 1.0, 0.0);
        assert_eq!(vector_loss(ex, ex), 0.0);
        assert_eq!(vector_loss(ex, ey), 2.0);
    }

    #[test]
    fn vector_loss_matches_chord_length() {
        // |a-b|^2 = 2(1 - cos theta) for unit vectors, checked in the plane.
        for k in 0..=36 {
            let theta = (k as f64 * 5.0).to_radians();
            let a = GazeVector::new(1.0, 0.0, 0.0);
            let b = GazeVector::new(theta.cos(), theta.sin(), 0.0);
            let expect = 2.0 * (1.0 - theta.cos());
            assert!(close(vector_loss(a, b), expect, 1e-12));
            let err = angular_error(a, b).unwrap();
            assert!(close(err, k as f64 * 5.0, 1e-9));
        }
    }

    #[test]
    fn grad_magnitude_values() {
        assert_eq!(angular_grad_magnitude(0.0).unwrap(), 1.0);
        assert!(close(
            angular_grad_magnitude(0.8).unwrap(),
            1.0 / 0.6,
            1e-12
        ));
        assert!(angular_grad_magnitude(0.9999).unwrap() > 70.0);
        assert!(angular_grad_magnitude(1.0).is_err());
        assert!(angular_grad_magnitude(-1.0).is_err());
    }

    #[test]
    fn grad_magnitude_is_monotone_on_grid() {
        let vals: Vec<f64> = (0..100)
            .map(|i| angular_grad_magnitude(i as f64 / 100.0).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn unit() -> impl Strategy<Value = GazeVector> {
            (-1.5f64..1.5, -3.1f64..3.1)
                .prop_map(|(p, y)| angles_to_vector(GazeAngles::new(p, y)).unwrap())
        }

        proptest! {
            #[test]
            fn metrics_are_symmetric(a in unit(), b in unit()) {
                prop_assert_eq!(angular_error(a, b).unwrap(), angular_error(b, a).unwrap());
                prop_assert_eq!(vector_loss(a, b), vector_loss(b, a));
            }

            #[test]
            fn angular_error_is_scale_invariant(a in unit(), b in unit(), k in 1e-3f64..1e3) {
                let e0 = angular_error(a, b).unwrap();
                // arccos amplifies rounding by 1/sin(theta); stay away from 0 and 180 degrees.
                prop_assume!(e0 > 1.0 && e0 < 179.0);
                let e1 = angular_error(a.scale(k), b).unwrap();
                prop_assert!((e0 - e1).abs() <= 1e-12);
            }
        }
    }
}
