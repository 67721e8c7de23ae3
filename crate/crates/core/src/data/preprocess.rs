use image::imageops::{resize, FilterType};
use image::RgbImage;
use ndarray::Array3;

use crate::error::{FlameError, Result};
use crate::geometry::{angles_to_vector, GazeAngles, GazeVector};
use crate::heatmap::{
    bilinear_downscale, crop_patch, eye_center, heatmap_window, patch_origin, LandmarkSet,
    NUM_LANDMARKS,
};
use crate::model::{ModelInput, COORD_FEATURES};
use crate::nn::{Element, Tensor4};

use super::record::{Eye, EyeChoice, HeadPose, Record, CROP_HEIGHT, CROP_WIDTH};

/// Result of [`pad_face_crop`]: the padded image and the map
/// `p -> scale * p + offset` from input to padded coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedCrop {
    pub image: Array3<u8>,
    pub scale: f64,
    pub offset: [f64; 2],
}

impl PaddedCrop {
    pub fn map_landmarks(&self, landmarks: &LandmarkSet) -> LandmarkSet {
        landmarks.transformed(self.scale, self.offset)
    }
}

pub fn to_rgb_image(a: &Array3<u8>) -> Result<RgbImage> {
    let (h, w, c) = a.dim();
    if c != 3 {
        return Err(FlameError::shape(format!(
            "expected 3 colour channels, got {c}"
        )));
    }
    RgbImage::from_raw(w as u32, h as u32, a.iter().copied().collect())
        .ok_or_else(|| FlameError::shape("image buffer size mismatch"))
}

pub fn from_rgb_image(img: &RgbImage) -> Array3<u8> {
    let (w, h) = img.dimensions();
    Array3::from_shape_vec((h as usize, w as usize, 3), img.as_raw().clone()).expect("rgb buffer")
}

/// Centers a face crop on a zero 384 x 480 canvas. Crops larger than the
/// canvas are first shrunk (aspect preserved) until they fit.
pub fn pad_face_crop(image: &Array3<u8>) -> Result<PaddedCrop> {
    let (h, w, _) = image.dim();
    if h == 0 || w == 0 {
        return Err(FlameError::Degenerate("empty face crop".into()));
    }
    let (mut src, mut scale) = (image.clone(), 1.0);
    if w > CROP_WIDTH || h > CROP_HEIGHT {
        scale = (CROP_WIDTH as f64 / w as f64).min(CROP_HEIGHT as f64 / h as f64);
        let nw = ((w as f64 * scale).round() as usize).clamp(1, CROP_WIDTH);
        let nh = ((h as f64 * scale).round() as usize).clamp(1, CROP_HEIGHT);
        src = from_rgb_image(&resize(
            &to_rgb_image(image)?,
            nw as u32,
            nh as u32,
            FilterType::Triangle,
        ));
    }
    let (sh, sw, _) = src.dim();
    let (ox, oy) = ((CROP_WIDTH - sw) / 2, (CROP_HEIGHT - sh) / 2);
    let mut out = Array3::<u8>::zeros((CROP_HEIGHT, CROP_WIDTH, 3));
    out.slice_mut(ndarray::s![oy..oy + sh, ox..ox + sw, ..])
        .assign(&src);
    Ok(PaddedCrop {
        image: out,
        scale,
        offset: [ox as f64, oy as f64],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    /// Network input side.
    pub resolution: usize,
    /// Side of the patch cut from the padded crop before downscaling.
    pub patch_size: usize,
    pub heatmap_scale: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            resolution: 120,
            patch_size: 120,
            heatmap_scale: 1.0,
        }
    }
}

impl SampleConfig {
    pub fn at_resolution(resolution: usize) -> Self {
        SampleConfig {
            resolution,
            ..Self::default()
        }
    }
}

/// One network-ready eye patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub subject_id: String,
    pub eye: Eye,
    /// `R x R x 3` in [0, 1].
    pub rgb: Array3<f32>,
    /// `R x R x 28`.
    pub heatmap: Array3<f32>,
    /// Landmarks in patch coordinates divided by the patch size, flattened.
    pub landmarks: Vec<f32>,
    pub head_pose: HeadPose,
    pub gaze: GazeAngles,
    /// Top-left pixel of the patch in the padded crop.
    pub origin: (i64, i64),
}

/// Cuts aligned RGB and heatmap patches around one eye.
pub fn make_sample(record: &Record, eye: EyeChoice, cfg: &SampleConfig) -> Result<Sample> {
    if cfg.resolution == 0 || cfg.resolution > cfg.patch_size {
        return Err(FlameError::Config(format!(
            "resolution {} must be in 1..={}",
            cfg.resolution, cfg.patch_size
        )));
    }
    let eye = eye.resolve(&record.image_id);
    let lm = record.landmarks(eye);
    let center = eye_center(lm);
    let p = cfg.patch_size;
    let origin = patch_origin(center, p);
    let rgb = crop_patch(&record.image, center, p)?.mapv(|v| v as f64 / 255.0);
    let heat = heatmap_window(
        lm,
        (record.width(), record.height()),
        origin,
        (p, p),
        cfg.heatmap_scale,
    )?;
    let (rgb, heat) = if cfg.resolution < p {
        (
            bilinear_downscale(&rgb, cfg.resolution)?,
            bilinear_downscale(&heat, cfg.resolution)?,
        )
    } else {
        (rgb, heat)
    };
    let landmarks = lm
        .points()
        .iter()
        .flat_map(|q| {
            [
                ((q[0] - origin.0 as f64) / p as f64) as f32,
                ((q[1] - origin.1 as f64) / p as f64) as f32,
            ]
        })
        .collect();
    Ok(Sample {
        image_id: record.image_id.clone(),
        subject_id: record.subject_id.clone(),
        eye,
        rgb: rgb.mapv(|v| v as f32),
        heatmap: heat.mapv(|v| v as f32),
        landmarks,
        head_pose: record.head_pose,
        gaze: record.gaze,
        origin,
    })
}

/// Stacks samples into model tensors plus unit gaze targets.
pub fn assemble_batch<F: Element>(samples: &[Sample]) -> Result<(ModelInput<F>, Vec<GazeVector>)> {
    let n = samples.len();
    let first = samples
        .first()
        .ok_or_else(|| FlameError::shape("empty batch"))?;
    let r = first.rgb.dim().0;
    let mut rgb = Vec::with_capacity(n * r * r * 3);
    let mut heat = Vec::with_capacity(n * r * r * NUM_LANDMARKS);
    let mut pose = Vec::with_capacity(n * 2);
    let mut coords = Vec::with_capacity(n * COORD_FEATURES);
    let mut targets = Vec::with_capacity(n);
    for s in samples {
        if s.rgb.dim() != (r, r, 3) || s.heatmap.dim() != (r, r, NUM_LANDMARKS) {
            return Err(FlameError::shape(
                "samples in a batch must share one resolution",
            ));
        }
        let cast = |v: &f32| F::from_f64(*v as f64);
        rgb.extend(s.rgb.iter().map(cast));
        heat.extend(s.heatmap.iter().map(cast));
        coords.extend(s.landmarks.iter().map(cast));
        pose.push(F::from_f64(s.head_pose.pitch));
        pose.push(F::from_f64(s.head_pose.yaw));
        targets.push(angles_to_vector(s.gaze)?);
    }
    let input = ModelInput {
        rgb: Tensor4::from_vec([n, r, r, 3], rgb)?,
        heatmap: Tensor4::from_vec([n, r, r, NUM_LANDMARKS], heat)?,
        pose: Tensor4::from_vec([n, 1, 1, 2], pose)?,
        landmarks: Tensor4::from_vec([n, 1, 1, COORD_FEATURES], coords)?,
    };
    Ok((input, targets))
}
