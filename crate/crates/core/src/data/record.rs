use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{FlameError, Result};
use crate::geometry::GazeAngles;
use crate::heatmap::LandmarkSet;

/// Padded face-crop width and height.
pub const CROP_WIDTH: usize = 384;
pub const CROP_HEIGHT: usize = 480;

/// Head rotation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HeadPose {
    pub pitch: f64,
    pub yaw: f64,
}

impl HeadPose {
    pub fn new(pitch: f64, yaw: f64) -> Self {
        HeadPose { pitch, yaw }
    }
}

/// The subject's own left or right eye (the left eye appears on the image's
/// right-hand side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

impl fmt::Display for Eye {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Eye::Left => "left",
            Eye::Right => "right",
        })
    }
}

/// One face crop with both eyes' landmarks and its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub image_id: String,
    pub subject_id: String,
    /// Image location relative to the dataset root.
    pub image_path: String,
    /// `H x W x 3` 8-bit RGB, normally 480 x 384.
    pub image: Arc<Array3<u8>>,
    pub left: LandmarkSet,
    pub right: LandmarkSet,
    pub head_pose: HeadPose,
    pub gaze: GazeAngles,
}

impl Record {
    pub fn landmarks(&self, eye: Eye) -> &LandmarkSet {
        match eye {
            Eye::Left => &self.left,
            Eye::Right => &self.right,
        }
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }

    pub fn height(&self) -> usize {
        self.image.dim().0
    }
}

/// Which eye `make_sample` crops. `Random` picks per record from the seed and
/// the record's image id, so a fixed seed always picks the same eye.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EyeChoice {
    Left,
    Right,
    Random(u64),
}

impl EyeChoice {
    pub fn resolve(self, image_id: &str) -> Eye {
        match self {
            EyeChoice::Left => Eye::Left,
            EyeChoice::Right => Eye::Right,
            EyeChoice::Random(seed) => {
                // FNV-1a over the id, mixed with the seed.
                let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
                for b in image_id.bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
                h ^= h >> 29;
                if h & 1 == 0 {
                    Eye::Left
                } else {
                    Eye::Right
                }
            }
        }
    }
}

/// Evaluation-time eye policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EyePolicy {
    /// Both eyes of every record are scored.
    Both,
    Left,
    Right,
    Random,
}

impl FromStr for EyePolicy {
    type Err = FlameError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "both" => Ok(EyePolicy::Both),
            "left" => Ok(EyePolicy::Left),
            "right" => Ok(EyePolicy::Right),
            "random" => Ok(EyePolicy::Random),
            other => Err(FlameError::Config(format!(
                "unknown eye policy `{other}` (expected both, left, right or random)"
            ))),
        }
    }
}

impl fmt::Display for EyePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EyePolicy::Both => "both",
            EyePolicy::Left => "left",
            EyePolicy::Right => "right",
            EyePolicy::Random => "random",
        })
    }
}

impl EyePolicy {
    /// Concrete choices for one record under this policy.
    pub fn choices(self, seed: u64) -> Vec<EyeChoice> {
        match self {
            EyePolicy::Both => vec![EyeChoice::Left, EyeChoice::Right],
            EyePolicy::Left => vec![EyeChoice::Left],
            EyePolicy::Right => vec![EyeChoice::Right],
            EyePolicy::Random => vec![EyeChoice::Random(seed)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_choice_is_seeded_and_mixed() {
        let ids: Vec<String> = (0..200).map(|i| format!("img{i:04}")).collect();
        let pick = |seed| {
            ids.iter()
                .map(|id| EyeChoice::Random(seed).resolve(id))
                .collect::<Vec<_>>()
        };
        assert_eq!(pick(3), pick(3));
        assert_ne!(pick(3), pick(4));
        let lefts = pick(3).iter().filter(|&&e| e == Eye::Left).count();
        assert!((60..140).contains(&lefts), "{lefts}");
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("Both".parse::<EyePolicy>().unwrap(), EyePolicy::Both);
        assert!("middle".parse::<EyePolicy>().is_err());
        assert_eq!(EyePolicy::Both.choices(0).len(), 2);
    }
}
