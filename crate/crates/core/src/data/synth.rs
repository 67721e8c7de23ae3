use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FlameError, Result};
use crate::geometry::{direction_from_angles, GazeAngles};
use crate::heatmap::LandmarkSet;

use super::record::{HeadPose, Record, CROP_HEIGHT, CROP_WIDTH};

/// Gaze sampling range in degrees.
pub const GAZE_PITCH_RANGE: f64 = 20.0;
pub const GAZE_YAW_RANGE: f64 = 25.0;
pub const HEAD_RANGE: f64 = 15.0;

/// Pupil displacement per unit of gaze-vector x/y, as a fraction of the
/// eye's half-width.
pub const PUPIL_GAIN: f64 = 0.5;

const SUPERSAMPLE: usize = 4;

/// Analytic outline of one rendered eye, in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyeShape {
    pub center: [f64; 2],
    pub half_width: f64,
    pub half_height: f64,
    pub iris_center: [f64; 2],
    pub iris_radius: f64,
    pub pupil_radius: f64,
}

impl EyeShape {
    /// Eye with the pupil displaced by `PUPIL_GAIN * half_width * (g_x, g_y)`.
    pub fn looking(center: [f64; 2], half_width: f64, aspect: f64, gaze: GazeAngles) -> Self {
        let g = direction_from_angles(gaze.pitch, gaze.yaw);
        let gain = PUPIL_GAIN * half_width;
        EyeShape {
            center,
            half_width,
            half_height: aspect * half_width,
            iris_center: [center[0] + gain * g[0], center[1] + gain * g[1]],
            iris_radius: 0.38 * half_width,
            pupil_radius: 0.15 * half_width,
        }
    }

    /// 28 landmarks: cornea (iris) circle 0..8, eyelid ellipse 8..20 starting
    /// at the outer-left corner and running over the top (corners 8 and 14,
    /// top 11, bottom 17), pupil circle 20..28.
    pub fn landmarks(&self) -> Vec<[f64; 2]> {
        let circle = |r: f64| {
            (0..8).map(move |k| {
                let t = k as f64 * PI / 4.0;
                [
                    self.iris_center[0] + r * t.cos(),
                    self.iris_center[1] - r * t.sin(),
                ]
            })
        };
        let lid = (0..12).map(|k| {
            let t = PI - k as f64 * PI / 6.0;
            [
                self.center[0] + self.half_width * t.cos(),
                self.center[1] - self.half_height * t.sin(),
            ]
        });
        circle(self.iris_radius)
            .chain(lid)
            .chain(circle(self.pupil_radius))
            .collect()
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let m = 0.2 * self.half_height + 2.0;
        (
            self.center[0] - self.half_width - m,
            self.center[1] - self.half_height - m,
            self.center[0] + self.half_width + m,
            self.center[1] + self.half_height + m,
        )
    }

    fn shade(&self, x: f64, y: f64, style: &Style) -> Option<[f64; 3]> {
        let ex = (x - self.center[0]) / self.half_width;
        let ey = (y - self.center[1]) / self.half_height;
        let e = ex * ex + ey * ey;
        if e > 1.0 {
            // Thin darker band just outside the lid margin.
            return (e <= 1.25).then_some(style.lid);
        }
        let d = ((x - self.iris_center[0]).powi(2) + (y - self.iris_center[1]).powi(2)).sqrt();
        Some(if d <= self.pupil_radius {
            style.pupil
        } else if d <= self.iris_radius {
            let t = (d - self.pupil_radius) / (self.iris_radius - self.pupil_radius);
            style.iris.map(|c| c * (1.0 - 0.35 * t))
        } else {
            style.sclera
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Style {
    skin: [f64; 3],
    lid: [f64; 3],
    sclera: [f64; 3],
    iris: [f64; 3],
    pupil: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
struct Subject {
    half_width: f64,
    aspect: f64,
    spacing: f64,
    face_x: f64,
    eye_y: f64,
    style: Style,
}

impl Subject {
    fn draw(rng: &mut impl Rng) -> Self {
        let skin = [
            rng.gen_range(150.0..230.0),
            rng.gen_range(110.0..180.0),
            rng.gen_range(90.0..150.0),
        ];
        let irises = [
            [95.0, 60.0, 30.0],
            [60.0, 100.0, 150.0],
            [70.0, 110.0, 60.0],
            [120.0, 90.0, 50.0],
        ];
        let iris = irises[rng.gen_range(0..irises.len())];
        Subject {
            half_width: rng.gen_range(26.0..34.0),
            aspect: rng.gen_range(0.42..0.52),
            spacing: rng.gen_range(110.0..130.0),
            face_x: rng.gen_range(184.0..200.0),
            eye_y: rng.gen_range(190.0..215.0),
            style: Style {
                skin,
                lid: skin.map(|c| c * 0.55),
                sclera: [236.0, 234.0, 228.0],
                iris,
                pupil: [18.0, 16.0, 16.0],
            },
        }
    }
}

/// A synthetic record with the analytic eye outlines it was rendered from.
#[derive(Debug, Clone)]
pub struct SynthRecord {
    pub record: Record,
    pub left: EyeShape,
    pub right: EyeShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// 0 renders exact images and landmarks; 1 adds pixel noise of sigma
    /// 12/255 and landmark noise of sigma 1 px.
    pub noise_level: f64,
    /// Defaults to `max(10, n / 16)`, capped at `n`.
    pub subjects: Option<usize>,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64, noise_level: f64) -> Self {
        SynthConfig {
            n,
            seed,
            noise_level,
            subjects: None,
        }
    }

    pub fn subject_count(&self) -> usize {
        self.subjects
            .unwrap_or((self.n / 16).max(10))
            .clamp(1, self.n.max(1))
    }
}

pub fn synth_generate(n: usize, seed: u64, noise_level: f64) -> Result<Vec<Record>> {
    Ok(
        synth_generate_detailed(&SynthConfig::new(n, seed, noise_level))?
            .into_iter()
            .map(|s| s.record)
            .collect(),
    )
}

/// Renders `cfg.n` face crops. Subjects own contiguous blocks of records;
/// every subject and record draws from its own RNG stream.
pub fn synth_generate_detailed(cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    if cfg.n == 0 {
        return Err(FlameError::Config(
            "synthetic dataset size must be >= 1".into(),
        ));
    }
    if !(cfg.noise_level.is_finite() && cfg.noise_level >= 0.0) {
        return Err(FlameError::Config(format!(
            "noise level {} must be >= 0",
            cfg.noise_level
        )));
    }
    let n_subjects = cfg.subject_count();
    let subjects: Vec<Subject> = (0..n_subjects)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1 + k as u64);
            Subject::draw(&mut rng)
        })
        .collect();
    (0..cfg.n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((1u64 << 32) + i as u64);
            let k = i * n_subjects / cfg.n;
            render_record(i, k, &subjects[k], cfg.noise_level, &mut rng)
        })
        .collect()
}

fn render_record(
    index: usize,
    subject_index: usize,
    s: &Subject,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SynthRecord> {
    let gaze = GazeAngles::from_degrees(
        rng.gen_range(-GAZE_PITCH_RANGE..=GAZE_PITCH_RANGE),
        rng.gen_range(-GAZE_YAW_RANGE..=GAZE_YAW_RANGE),
    );
    let head = HeadPose::new(
        rng.gen_range(-HEAD_RANGE..=HEAD_RANGE).to_radians(),
        rng.gen_range(-HEAD_RANGE..=HEAD_RANGE).to_radians(),
    );
    let cx = s.face_x - 60.0 * head.yaw.sin() + rng.gen_range(-3.0..3.0);
    let cy = s.eye_y - 60.0 * head.pitch.sin() + rng.gen_range(-3.0..3.0);
    let half_gap = 0.5 * s.spacing * head.yaw.cos();
    // The subject's right eye is on the image's left.
    let right = EyeShape::looking([cx - half_gap, cy], s.half_width, s.aspect, gaze);
    let left = EyeShape::looking([cx + half_gap, cy], s.half_width, s.aspect, gaze);
    let mut image = render_canvas(CROP_WIDTH, CROP_HEIGHT, &[left, right], &s.style);
    let landmark_noise = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("sigma");
    let mut marks = |eye: &EyeShape| {
        let pts = eye
            .landmarks()
            .into_iter()
            .map(|[x, y]| {
                if noise > 0.0 {
                    [
                        x + landmark_noise.sample(rng),
                        y + landmark_noise.sample(rng),
                    ]
                } else {
                    [x, y]
                }
            })
            .collect();
        LandmarkSet::new(pts)
    };
    let left_lm = marks(&left)?;
    let right_lm = marks(&right)?;
    if noise > 0.0 {
        let pix = Normal::new(0.0, 12.0 * noise).expect("sigma");
        image.mapv_inplace(|v| (v + pix.sample(rng)).clamp(0.0, 255.0));
    }
    let image_id = format!("synth{index:05}");
    Ok(SynthRecord {
        record: Record {
            image_path: format!("images/{image_id}.png"),
            image_id,
            subject_id: format!("subject{subject_index:03}"),
            image: Arc::new(image.mapv(|v| v.round() as u8)),
            left: left_lm,
            right: right_lm,
            head_pose: head,
            gaze,
        },
        left,
        right,
    })
}

/// Renders eyes on a skin-coloured canvas; values are 0..255 floats.
fn render_canvas(width: usize, height: usize, eyes: &[EyeShape], style: &Style) -> Array3<f64> {
    let mut img = Array3::<f64>::zeros((height, width, 3));
    for row in 0..height {
        for col in 0..width {
            for c in 0..3 {
                img[[row, col, c]] = style.skin[c];
            }
        }
    }
    for eye in eyes {
        let (x0, y0, x1, y1) = eye.bounds();
        let cols = (x0.floor().max(0.0) as usize)..(x1.ceil().min(width as f64) as usize);
        let rows = (y0.floor().max(0.0) as usize)..(y1.ceil().min(height as f64) as usize);
        for row in rows {
            for col in cols.clone() {
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let x = col as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let y = row as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        let v = eye.shade(x, y, style).unwrap_or(style.skin);
                        (0..3).for_each(|c| acc[c] += v[c]);
                    }
                }
                let k = (SUPERSAMPLE * SUPERSAMPLE) as f64;
                for c in 0..3 {
                    img[[row, col, c]] = acc[c] / k;
                }
            }
        }
    }
    img
}

/// A single `size x size` eye patch looking along `gaze`, for previews.
pub fn render_eye_patch(size: usize, gaze: GazeAngles) -> (Array3<u8>, LandmarkSet) {
    let half = size as f64 / 2.0;
    let eye = EyeShape::looking([half, half], 0.3 * size as f64, 0.47, gaze);
    let style = Style {
        skin: [205.0, 150.0, 125.0],
        lid: [113.0, 83.0, 69.0],
        sclera: [236.0, 234.0, 228.0],
        iris: [95.0, 60.0, 30.0],
        pupil: [18.0, 16.0, 16.0],
    };
    let img = render_canvas(size, size, &[eye], &style);
    let lm = LandmarkSet::new(eye.landmarks()).expect("28 finite points");
    (img.mapv(|v| v.round() as u8), lm)
}
