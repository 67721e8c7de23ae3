use flame_wasm_demo::*;

fn dark_centroid_x(rgba: &[u8], size: usize) -> f64 {
    let (mut sum, mut n) = (0.0, 0.0);
    for (i, px) in rgba.chunks(4).enumerate() {
        if (px[0] as u32 + px[1] as u32 + px[2] as u32) < 120 {
            sum += (i % size) as f64;
            n += 1.0;
        }
    }
    assert!(n > 0.0, "no pupil pixels");
    sum / n
}

#[test]
fn eye_render_is_opaque_and_deterministic() {
    let a = eye_rgba(64, 5.0, -10.0).unwrap();
    assert_eq!(a.len(), 64 * 64 * 4);
    assert!(a.chunks(4).all(|p| p[3] == 255));
    assert_eq!(a, eye_rgba(64, 5.0, -10.0).unwrap());
    assert_ne!(a, eye_rgba(64, 5.0, 10.0).unwrap());
}

#[test]
fn pupil_moves_sideways_with_yaw() {
    let size = 96;
    let centre = (size as f64 - 1.0) / 2.0;
    let left = dark_centroid_x(&eye_rgba(size, 0.0, -25.0).unwrap(), size) - centre;
    let right = dark_centroid_x(&eye_rgba(size, 0.0, 25.0).unwrap(), size) - centre;
    assert!(left * right < 0.0, "{left} {right}");
    assert!((left + right).abs() < 1.5, "{left} {right}");
}

#[test]
fn heatmap_is_brightest_on_landmarks() {
    let size = 64;
    let lm = eye_landmarks(size, 0.0, 0.0).unwrap();
    assert_eq!(lm.len(), 56);
    for channel in [0, 9, 27] {
        let img = heatmap_rgba(size, 0.0, 0.0, channel).unwrap();
        let brightest = img
            .chunks(4)
            .enumerate()
            .max_by_key(|(_, p)| p[0] as u32 + p[1] as u32 + p[2] as u32)
            .unwrap()
            .0;
        let (col, row) = ((brightest % size) as f64, (brightest / size) as f64);
        let (x, y) = (lm[2 * channel as usize], lm[2 * channel as usize + 1]);
        assert!((col + 0.5 - x).abs() <= 1.0 && (row + 0.5 - y).abs() <= 1.0);
    }
    let all = heatmap_rgba(size, 0.0, 0.0, -1).unwrap();
    assert_eq!(all.len(), size * size * 4);
    assert!(heatmap_rgba(size, 0.0, 0.0, 28).is_err());
}

#[test]
fn heat_color_ramp() {
    assert_eq!(heat_color(0.0), [0, 0, 0]);
    assert_eq!(heat_color(1.0), [255, 255, 255]);
    assert_eq!(heat_color(1.0 / 3.0), [255, 0, 0]);
    assert_eq!(heat_color(7.0), [255, 255, 255]);
}

#[test]
fn vector_conversion() {
    let (p, y) = (12.0f64, -33.0f64);
    let (pr, yr) = (p.to_radians(), y.to_radians());
    let want = [-pr.cos() * yr.sin(), -pr.sin(), -pr.cos() * yr.cos()];
    let v = angles_to_vector(p, y).unwrap();
    for (a, b) in v.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    let back = vector_to_angles(3.0 * v[0], 3.0 * v[1], 3.0 * v[2]).unwrap();
    assert!((back[0] - p).abs() < 1e-9 && (back[1] - y).abs() < 1e-9);
    assert!(vector_to_angles(0.0, 0.0, 0.0).is_err());
}

#[test]
fn angular_error_between_angle_pairs() {
    assert!((angle_between(0.0, 0.0, 0.0, 30.0).unwrap() - 30.0).abs() < 1e-9);
    assert!((angle_between(10.0, 0.0, -10.0, 0.0).unwrap() - 20.0).abs() < 1e-9);
    assert!(angle_between(0.0, 0.0, 0.0, 0.0).unwrap().abs() < 1e-6);
}

#[test]
fn invalid_inputs_are_errors() {
    assert!(eye_rgba(4, 0.0, 0.0).is_err());
    assert!(eye_rgba(MAX_SIZE + 1, 0.0, 0.0).is_err());
    assert!(angles_to_vector(90.0, 0.0).is_err());
    assert!(angles_to_vector(f64::NAN, 0.0).is_err());
}
