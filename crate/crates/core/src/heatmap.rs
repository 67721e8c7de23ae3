//! Eye-landmark heatmaps and the patch geometry shared by the RGB and
//! heatmap inputs.
//!
//! Arrays are `H x W x C` (`ndarray::Array3`), indexed `[[row, col, channel]]`.
//! Pixel `(col, row)` is sampled at its center `(col + 0.5, row + 0.5)`.

use std::f64::consts::PI;

use ndarray::{s, Array3};
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{FlameError, Result};

pub const NUM_LANDMARKS: usize = 28;

/// Landmark layout used throughout the crate (and by the synthetic renderer):
/// indices 0..8 outline the cornea (iris), 8..20 the eyelids, 20..28 the
/// pupil. Eyelid points go counter-clockwise in image space starting at the
/// outer-left corner, so 8 and 14 are the corners and 11 / 17 the top and
/// bottom mid-lid points.
pub const CORNEA: std::ops::Range<usize> = 0..8;
pub const EYELID: std::ops::Range<usize> = 8..20;
pub const PUPIL: std::ops::Range<usize> = 20..28;
pub const CORNER_INDICES: [usize; 4] = [8, 14, 11, 17];

/// Peak of the unit-covariance 2D Gaussian density.
pub const GAUSSIAN_PEAK: f64 = 1.0 / (2.0 * PI);

/// Default guard for [`crop_patch`]: patch side at most twice the larger image side.
pub const DEFAULT_CROP_GUARD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(FlameError::Landmarks(points.len()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FlameError::Domain(
                "landmark coordinates must be finite".into(),
            ));
        }
        Ok(LandmarkSet { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn get(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    /// Applies `p -> scale * p + offset` to every point.
    pub fn transformed(&self, scale: f64, offset: [f64; 2]) -> LandmarkSet {
        LandmarkSet {
            points: self
                .points
                .iter()
                .map(|p| [p[0] * scale + offset[0], p[1] * scale + offset[1]])
                .collect(),
        }
    }

    /// Flattened `[x0, y0, x1, y1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }
}

impl TryFrom<Vec<[f64; 2]>> for LandmarkSet {
    type Error = FlameError;

    fn try_from(points: Vec<[f64; 2]>) -> Result<Self> {
        LandmarkSet::new(points)
    }
}

impl From<LandmarkSet> for Vec<[f64; 2]> {
    fn from(l: LandmarkSet) -> Self {
        l.points
    }
}

/// Full-image heatmap, one channel per landmark, identity covariance.
pub fn gaussian_heatmap(
    landmarks: &LandmarkSet,
    width: usize,
    height: usize,
) -> Result<Array3<f64>> {
    scaled_heatmap(landmarks, width, height, 1.0)
}

pub fn scaled_heatmap(
    landmarks: &LandmarkSet,
    width: usize,
    height: usize,
    scale: f64,
) -> Result<Array3<f64>> {
    if width == 0 || height == 0 {
        return Err(FlameError::shape("heatmap needs width, height >= 1"));
    }
    heatmap_window(landmarks, (width, height), (0, 0), (width, height), scale)
}

/// The `size x size` window of the full-image heatmap whose top-left pixel is
/// `origin`. Pixels of the window outside the `image` extent are zero, so the
/// result equals [`crop_patch`] applied to the full heatmap without building
/// it.
pub fn heatmap_window(
    landmarks: &LandmarkSet,
    image: (usize, usize),
    origin: (i64, i64),
    size: (usize, usize),
    scale: f64,
) -> Result<Array3<f64>> {
    let (img_w, img_h) = (image.0 as i64, image.1 as i64);
    let (win_w, win_h) = size;
    let mut out = Array3::<f64>::zeros((win_h, win_w, NUM_LANDMARKS));
    // The isotropic Gaussian factors into a row term and a column term.
    let axis = |origin: i64, len: usize, extent: i64, centre: f64| -> Vec<f64> {
        (0..len)
            .map(|k| {
                let s = origin + k as i64;
                if s < 0 || s >= extent {
                    0.0
                } else {
                    let d = s as f64 + 0.5 - centre;
                    (-0.5 * d * d).exp()
                }
            })
            .collect()
    };
    for (c, p) in landmarks.points.iter().enumerate() {
        let gx = axis(origin.0, win_w, img_w, p[0]);
        let gy = axis(origin.1, win_h, img_h, p[1]);
        let amp = scale * GAUSSIAN_PEAK;
        for (row, &vy) in gy.iter().enumerate() {
            if vy == 0.0 {
                continue;
            }
            let a = amp * vy;
            for (col, &vx) in gx.iter().enumerate() {
                out[[row, col, c]] = a * vx;
            }
        }
    }
    Ok(out)
}

/// Mean of the four eye-corner landmarks.
pub fn eye_center(landmarks: &LandmarkSet) -> (f64, f64) {
    let (mut x, mut y) = (0.0, 0.0);
    for &i in &CORNER_INDICES {
        x += landmarks.points[i][0];
        y += landmarks.points[i][1];
    }
    (x / 4.0, y / 4.0)
}

/// Top-left pixel of the `size`-wide patch centered on `center`. The center
/// is rounded half away from zero.
pub fn patch_origin(center: (f64, f64), size: usize) -> (i64, i64) {
    let half = size.div_ceil(2) as i64;
    (
        center.0.round() as i64 - half,
        center.1.round() as i64 - half,
    )
}

pub fn crop_patch<T: Clone + Zero>(
    image: &Array3<T>,
    center: (f64, f64),
    size: usize,
) -> Result<Array3<T>> {
    crop_patch_with_guard(image, center, size, DEFAULT_CROP_GUARD)
}

/// Axis-aligned `size x size` crop; out-of-image pixels are zero.
pub fn crop_patch_with_guard<T: Clone + Zero>(
    image: &Array3<T>,
    center: (f64, f64),
    size: usize,
    guard: f64,
) -> Result<Array3<T>> {
    let (h, w, c) = image.dim();
    if size == 0 {
        return Err(FlameError::shape("patch size must be >= 1"));
    }
    if size as f64 > guard * h.max(w) as f64 {
        return Err(FlameError::shape(format!(
            "patch size {size} exceeds {guard} x image extent {w}x{h}"
        )));
    }
    if !(center.0.is_finite() && center.1.is_finite()) {
        return Err(FlameError::Domain("patch center must be finite".into()));
    }
    let (x0, y0) = patch_origin(center, size);
    let mut out = Array3::<T>::zeros((size, size, c));
    let clip = |origin: i64, extent: usize| {
        let lo = origin.max(0);
        let hi = (origin + size as i64).min(extent as i64);
        (lo, hi)
    };
    let (sx0, sx1) = clip(x0, w);
    let (sy0, sy1) = clip(y0, h);
    if sx0 < sx1 && sy0 < sy1 {
        let src = image.slice(s![
            sy0 as usize..sy1 as usize,
            sx0 as usize..sx1 as usize,
            ..
        ]);
        out.slice_mut(s![
            (sy0 - y0) as usize..(sy1 - y0) as usize,
            (sx0 - x0) as usize..(sx1 - x0) as usize,
            ..
        ])
        .assign(&src);
    }
    Ok(out)
}

/// Bilinear resampling of a square array to `target x target`. Source
/// coordinate of output index `i` is `(i + 0.5) * (n / target) - 0.5`,
/// clamped to the valid range.
pub fn bilinear_downscale(t: &Array3<f64>, target: usize) -> Result<Array3<f64>> {
    let (h, w, c) = t.dim();
    if target < 1 {
        return Err(FlameError::shape("downscale target must be >= 1"));
    }
    if h != w {
        return Err(FlameError::shape(format!(
            "downscale needs a square input, got {h}x{w}"
        )));
    }
    if target > h {
        return Err(FlameError::shape(format!(
            "downscale target {target} exceeds input size {h}"
        )));
    }
    let ratio = h as f64 / target as f64;
    let taps: Vec<(usize, usize, f64)> = (0..target)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (h - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(h - 1);
            (lo, hi, s - lo as f64)
        })
        .collect();
    let mut out = Array3::<f64>::zeros((target, target, c));
    for (oy, &(y0, y1, fy)) in taps.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in taps.iter().enumerate() {
            for ch in 0..c {
                let top = t[[y0, x0, ch]] * (1.0 - fx) + t[[y0, x1, ch]] * fx;
                let bot = t[[y1, x0, ch]] * (1.0 - fx) + t[[y1, x1, ch]] * fx;
                out[[oy, ox, ch]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Ok(out)
}

/// `(col, row)` of the maximum of one channel; first occurrence wins.
pub fn channel_argmax(t: &Array3<f64>, channel: usize) -> (usize, usize) {
    let (h, w, _) = t.dim();
    let mut best = (0, 0);
    let mut best_v = f64::NEG_INFINITY;
    for row in 0..h {
        for col in 0..w {
            let v = t[[row, col, channel]];
            if v > best_v {
                best_v = v;
                best = (col, row);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn landmarks_at(points: impl FnMut(usize) -> [f64; 2]) -> LandmarkSet {
        LandmarkSet::new((0..NUM_LANDMARKS).map(points).collect()).unwrap()
    }

    fn random_landmarks(rng: &mut ChaCha8Rng, w: f64, h: f64) -> LandmarkSet {
        landmarks_at(|_| [rng.gen_range(0.0..w), rng.gen_range(0.0..h)])
    }

    fn direct(dx: f64, dy: f64) -> f64 {
        (-0.5 * (dx * dx + dy * dy)).exp() / (2.0 * std::f64::consts::PI)
    }

    #[test]
    fn matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lm = LandmarkSet::new(
            (0..NUM_LANDMARKS)
                .map(|_| [rng.gen_range(0.0..24.0), rng.gen_range(0.0..18.0)])
                .collect(),
        )
        .unwrap();
        let hm = gaussian_heatmap(&lm, 24, 18).unwrap();
        for ((row, col, c), &v) in hm.indexed_iter() {
            let p = lm.get(c);
            let want = direct(col as f64 + 0.5 - p[0], row as f64 + 0.5 - p[1]);
            assert!((v - want).abs() <= 1e-13 * want, "{v} {want}");
        }
    }

    #[test]
    fn rejects_wrong_point_count() {
        assert!(matches!(
            LandmarkSet::new(vec![[0.0, 0.0]; 27]),
            Err(FlameError::Landmarks(27))
        ));
        assert!(LandmarkSet::new(vec![[f64::NAN, 0.0]; 28]).is_err());
    }

    #[test]
    fn peak_at_pixel_center() {
        let lm = landmarks_at(|c| [c as f64 + 0.5, 3.5]);
        let hm = gaussian_heatmap(&lm, 32, 8).unwrap();
        assert_eq!(hm.dim(), (8, 32, 28));
        for c in 0..NUM_LANDMARKS {
            assert!((hm[[3, c, c]] - 0.159_154_943_091_895_35).abs() < 1e-15);
            assert_eq!(channel_argmax(&hm, c), (c, 3));
        }
    }

    #[test]
    fn unit_distance_value() {
        let lm = landmarks_at(|_| [4.5, 4.5]);
        let hm = gaussian_heatmap(&lm, 9, 9).unwrap();
        let expect = GAUSSIAN_PEAK * (-0.5f64).exp();
        assert!((expect - 0.096_532_4).abs() < 1e-7);
        assert!((hm[[4, 5, 0]] - expect).abs() < 1e-15);
        assert!((hm[[3, 4, 0]] - expect).abs() < 1e-15);
        // mirror pixels about mu agree exactly
        assert_eq!(hm[[4, 2, 7]], hm[[4, 6, 7]]);
        assert_eq!(hm[[1, 4, 7]], hm[[7, 4, 7]]);
    }

    #[test]
    fn values_bounded_and_channels_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lm = random_landmarks(&mut rng, 20.0, 16.0);
        let hm = gaussian_heatmap(&lm, 20, 16).unwrap();
        assert!(hm.iter().all(|&v| (0.0..=GAUSSIAN_PEAK).contains(&v)));

        let mut pts = lm.points().to_vec();
        pts[5] = [1.0, 1.0];
        let hm2 = gaussian_heatmap(&LandmarkSet::new(pts).unwrap(), 20, 16).unwrap();
        for c in 0..NUM_LANDMARKS {
            let same = hm.slice(s![.., .., c]) == hm2.slice(s![.., .., c]);
            assert_eq!(same, c != 5, "channel {c}");
        }
    }

    #[test]
    fn integer_translation_shifts_heatmap() {
        // Dyadic coordinates keep `p + shift` exactly representable.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lm = landmarks_at(|_| {
            [
                rng.gen_range(0..30 * 1024) as f64 / 1024.0,
                rng.gen_range(0..30 * 1024) as f64 / 1024.0,
            ]
        });
        let (dx, dy) = (3usize, 2usize);
        let shifted = lm.transformed(1.0, [dx as f64, dy as f64]);
        let a = gaussian_heatmap(&lm, 40, 40).unwrap();
        let b = gaussian_heatmap(&shifted, 40, 40).unwrap();
        for row in 0..40 - dy {
            for col in 0..40 - dx {
                for c in 0..NUM_LANDMARKS {
                    assert_eq!(a[[row, col, c]], b[[row + dy, col + dx, c]]);
                }
            }
        }
    }

    #[test]
    fn outside_landmark_keeps_small_channel() {
        let lm = landmarks_at(|_| [-30.0, -30.0]);
        let hm = gaussian_heatmap(&lm, 10, 10).unwrap();
        assert!(hm.iter().all(|&v| (0.0..1e-100).contains(&v)));
        assert!(gaussian_heatmap(&lm, 0, 10).is_err());
    }

    #[test]
    fn scale_flag_multiplies_values() {
        let lm = landmarks_at(|_| [2.5, 2.5]);
        let hm = scaled_heatmap(&lm, 5, 5, 2.0 * PI).unwrap();
        assert!((hm[[2, 2, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eye_center_is_corner_mean() {
        let mut pts = vec![[100.0, 100.0]; NUM_LANDMARKS];
        pts[8] = [0.0, 0.0];
        pts[14] = [2.0, 0.0];
        pts[11] = [0.0, 2.0];
        pts[17] = [2.0, 2.0];
        assert_eq!(eye_center(&LandmarkSet::new(pts).unwrap()), (1.0, 1.0));
        assert_eq!(eye_center(&landmarks_at(|_| [5.0, 7.0])), (5.0, 7.0));
    }

    #[test]
    fn crop_identity_and_zero_fill() {
        let img = Array3::from_shape_fn((6, 4, 2), |(r, c, ch)| (r * 10 + c + ch * 100) as f64);
        assert_eq!(
            crop_patch(&img, (2.0, 3.0), 4).unwrap(),
            img.slice(s![1..5, .., ..])
        );
        let sq = Array3::from_shape_fn((5, 5, 1), |(r, c, _)| (r * 5 + c) as f64);
        assert_eq!(crop_patch(&sq, (2.5, 2.5), 5).unwrap(), sq);

        let ones = Array3::<f64>::ones((8, 8, 3));
        let p = crop_patch(&ones, (0.0, 0.0), 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expect = if r >= 2 && c >= 2 { 1.0 } else { 0.0 };
                assert!(p.slice(s![r, c, ..]).iter().all(|&v| v == expect));
            }
        }
    }

    #[test]
    fn crop_far_outside_is_all_zero() {
        let ones = Array3::<u8>::ones((8, 8, 3));
        let p = crop_patch(&ones, (100.0, -50.0), 6).unwrap();
        assert!(p.iter().all(|&v| v == 0));
    }

    #[test]
    fn crop_guard_and_rounding() {
        let img = Array3::<f64>::zeros((10, 10, 1));
        assert!(crop_patch(&img, (5.0, 5.0), 21).is_err());
        assert!(crop_patch(&img, (5.0, 5.0), 20).is_ok());
        assert!(crop_patch_with_guard(&img, (5.0, 5.0), 21, 3.0).is_ok());
        assert!(crop_patch(&img, (5.0, 5.0), 0).is_err());
        assert_eq!(patch_origin((2.5, -2.5), 4), (1, -5));
    }

    #[test]
    fn window_equals_crop_of_full_heatmap() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lm = random_landmarks(&mut rng, 48.0, 40.0);
        let full = gaussian_heatmap(&lm, 48, 40).unwrap();
        for &center in &[(20.3, 17.8), (2.0, 3.0), (47.0, 39.0)] {
            let crop = crop_patch(&full, center, 24).unwrap();
            let win =
                heatmap_window(&lm, (48, 40), patch_origin(center, 24), (24, 24), 1.0).unwrap();
            assert_eq!(crop, win);
        }
    }

    #[test]
    fn downscale_constant_and_two_by_two() {
        let c = Array3::from_elem((12, 12, 3), 0.25);
        let d = bilinear_downscale(&c, 5).unwrap();
        assert!(d.iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let t = Array3::from_shape_vec((2, 2, 1), vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(bilinear_downscale(&t, 1).unwrap()[[0, 0, 0]], 0.5);

        assert!(bilinear_downscale(&c, 0).is_err());
        assert!(bilinear_downscale(&c, 13).is_err());
        assert!(bilinear_downscale(&Array3::zeros((4, 5, 1)), 2).is_err());
        assert_eq!(bilinear_downscale(&c, 12).unwrap(), c);
    }

    #[test]
    fn downscaled_peak_stays_near_landmark() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let lm = random_landmarks(&mut rng, 110.0, 110.0).transformed(1.0, [5.0, 5.0]);
            let hm = gaussian_heatmap(&lm, 120, 120).unwrap();
            for target in [60usize, 30] {
                let d = bilinear_downscale(&hm, target).unwrap();
                let k = 120.0 / target as f64;
                for c in 0..NUM_LANDMARKS {
                    let (col, row) = channel_argmax(&d, c);
                    let p = lm.get(c);
                    let (mx, my) = (p[0] / k - 0.5, p[1] / k - 0.5);
                    assert!((col as f64 - mx).abs() <= 1.0 && (row as f64 - my).abs() <= 1.0);
                }
            }
        }
    }
}
