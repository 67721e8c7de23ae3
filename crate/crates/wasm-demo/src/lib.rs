//! Browser bindings for a few flame-gaze operations. The plain functions
//! are usable (and tested) natively; the `wasm_bindgen` exports wrap them.

use flame_gaze::data::render_eye_patch;
use flame_gaze::geometry::{angular_error, GazeAngles, GazeVector};
use flame_gaze::heatmap::{gaussian_heatmap, GAUSSIAN_PEAK, NUM_LANDMARKS};
use wasm_bindgen::prelude::*;

pub const MIN_SIZE: usize = 16;
pub const MAX_SIZE: usize = 256;

fn check_size(size: usize) -> Result<(), String> {
    if (MIN_SIZE..=MAX_SIZE).contains(&size) {
        Ok(())
    } else {
        Err(format!("patch size {size} outside {MIN_SIZE}..={MAX_SIZE}"))
    }
}

fn gaze(pitch_deg: f64, yaw_deg: f64) -> Result<GazeAngles, String> {
    let g = GazeAngles::from_degrees(pitch_deg, yaw_deg);
    g.to_vector().map_err(|e| e.to_string())?;
    Ok(g)
}

/// RGBA pixels of a synthetic eye looking along (pitch, yaw) in degrees.
pub fn eye_rgba(size: usize, pitch_deg: f64, yaw_deg: f64) -> Result<Vec<u8>, String> {
    check_size(size)?;
    let (img, _) = render_eye_patch(size, gaze(pitch_deg, yaw_deg)?);
    let mut out = Vec::with_capacity(size * size * 4);
    for px in img.as_slice().expect("standard layout").chunks(3) {
        out.extend_from_slice(px);
        out.push(255);
    }
    Ok(out)
}

/// The 28 landmarks of the rendered eye as `x0, y0, x1, y1, ...` in pixels.
pub fn eye_landmarks(size: usize, pitch_deg: f64, yaw_deg: f64) -> Result<Vec<f64>, String> {
    check_size(size)?;
    let (_, lm) = render_eye_patch(size, gaze(pitch_deg, yaw_deg)?);
    Ok(lm.points().iter().flatten().copied().collect())
}

/// RGBA view of the landmark heatmap of the rendered eye. `channel` picks a
/// single landmark; a negative value shows the maximum over all of them.
/// Intensities are scaled so the Gaussian peak maps to full brightness.
pub fn heatmap_rgba(
    size: usize,
    pitch_deg: f64,
    yaw_deg: f64,
    channel: i32,
) -> Result<Vec<u8>, String> {
    check_size(size)?;
    if channel >= NUM_LANDMARKS as i32 {
        return Err(format!("channel {channel} outside 0..{NUM_LANDMARKS}"));
    }
    let (_, lm) = render_eye_patch(size, gaze(pitch_deg, yaw_deg)?);
    let hm = gaussian_heatmap(&lm, size, size).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(size * size * 4);
    for row in 0..size {
        for col in 0..size {
            let v = if channel < 0 {
                (0..NUM_LANDMARKS).fold(0.0f64, |m, c| m.max(hm[[row, col, c]]))
            } else {
                hm[[row, col, channel as usize]]
            };
            out.extend_from_slice(&heat_color(v / GAUSSIAN_PEAK));
            out.push(255);
        }
    }
    Ok(out)
}

/// Black through red and yellow to white.
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * 3.0;
    let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(t), ch(t - 1.0), ch(t - 2.0)]
}

/// Unit gaze vector `[x, y, z]` for angles in degrees.
pub fn angles_to_vector(pitch_deg: f64, yaw_deg: f64) -> Result<Vec<f64>, String> {
    let v = gaze(pitch_deg, yaw_deg)?
        .to_vector()
        .map_err(|e| e.to_string())?;
    Ok(v.as_array().to_vec())
}

/// `[pitch, yaw]` in degrees for any nonzero vector.
pub fn vector_to_angles(x: f64, y: f64, z: f64) -> Result<Vec<f64>, String> {
    let a = flame_gaze::geometry::vector_to_angles(GazeVector::new(x, y, z))
        .map_err(|e| e.to_string())?;
    Ok(vec![a.pitch.to_degrees(), a.yaw.to_degrees()])
}

/// Angle in degrees between two gaze directions given as angles.
pub fn angle_between(pitch_a: f64, yaw_a: f64, pitch_b: f64, yaw_b: f64) -> Result<f64, String> {
    let va = gaze(pitch_a, yaw_a)?
        .to_vector()
        .map_err(|e| e.to_string())?;
    let vb = gaze(pitch_b, yaw_b)?
        .to_vector()
        .map_err(|e| e.to_string())?;
    angular_error(va, vb).map_err(|e| e.to_string())
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = renderEye)]
pub fn render_eye_js(size: usize, pitch_deg: f64, yaw_deg: f64) -> Result<Vec<u8>, JsError> {
    js(eye_rgba(size, pitch_deg, yaw_deg))
}

#[wasm_bindgen(js_name = eyeLandmarks)]
pub fn eye_landmarks_js(size: usize, pitch_deg: f64, yaw_deg: f64) -> Result<Vec<f64>, JsError> {
    js(eye_landmarks(size, pitch_deg, yaw_deg))
}

#[wasm_bindgen(js_name = renderHeatmap)]
pub fn render_heatmap_js(
    size: usize,
    pitch_deg: f64,
    yaw_deg: f64,
    channel: i32,
) -> Result<Vec<u8>, JsError> {
    js(heatmap_rgba(size, pitch_deg, yaw_deg, channel))
}

#[wasm_bindgen(js_name = anglesToVector)]
pub fn angles_to_vector_js(pitch_deg: f64, yaw_deg: f64) -> Result<Vec<f64>, JsError> {
    js(angles_to_vector(pitch_deg, yaw_deg))
}

#[wasm_bindgen(js_name = vectorToAngles)]
pub fn vector_to_angles_js(x: f64, y: f64, z: f64) -> Result<Vec<f64>, JsError> {
    js(vector_to_angles(x, y, z))
}

#[wasm_bindgen(js_name = angularError)]
pub fn angular_error_js(
    pitch_a: f64,
    yaw_a: f64,
    pitch_b: f64,
    yaw_b: f64,
) -> Result<f64, JsError> {
    js(angle_between(pitch_a, yaw_a, pitch_b, yaw_b))
}
