//! Synthetic frontal face frames with eyes at the mean-shape landmark positions.

use image::{Rgb, RgbImage};

use super::eye::{render_eye, SyntheticEyeSpec};
use crate::eyes::{
    padded_eye_box, place_mean_shape, EyeBox, EyeSide, LandmarkSet, CROP_SIZE, DEFAULT_PAD,
};

pub const BACKGROUND: [u8; 3] = [38, 40, 46];
const FACE: [u8; 3] = [222, 178, 153];

/// Face box for a frame: a centred ellipse covering most of the height.
pub fn default_face_box(width: u32, height: u32) -> [f64; 4] {
    let h = height as f64 * 0.8;
    let w = (h * 0.78).min(width as f64 * 0.9);
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    [
        (cx - w / 2.0).round(),
        (cy - h / 2.0).round(),
        (cx + w / 2.0).round(),
        (cy + h / 2.0).round(),
    ]
}

/// Ground-truth squared eye regions the renderer paints into.
pub fn eye_regions(face: [f64; 4]) -> (EyeBox, EyeBox) {
    let lm = LandmarkSet::new(place_mean_shape(face), 1.0).expect("mean shape has 68 points");
    let left = padded_eye_box(&lm, EyeSide::Left, DEFAULT_PAD).expect("mean shape eyes have area");
    let right =
        padded_eye_box(&lm, EyeSide::Right, DEFAULT_PAD).expect("mean shape eyes have area");
    (left.squared(), right.squared())
}

/// Renders one frame. The right eye is the mirror image of its render, as
/// on a real face.
pub fn render_face(
    width: u32,
    height: u32,
    face: [f64; 4],
    left: &SyntheticEyeSpec,
    right: &SyntheticEyeSpec,
) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb(BACKGROUND));
    let [x0, y0, x1, y1] = face;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let (a, b) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
    let ys = (y0.floor().max(0.0) as u32)..(y1.ceil().min(height as f64) as u32);
    for y in ys {
        for x in (x0.floor().max(0.0) as u32)..(x1.ceil().min(width as f64) as u32) {
            let u = (x as f64 + 0.5 - cx) / a;
            let v = (y as f64 + 0.5 - cy) / b;
            if u * u + v * v <= 1.0 {
                img.put_pixel(x, y, Rgb(FACE));
            }
        }
    }

    let (left_box, right_box) = eye_regions(face);
    for (region, spec, mirror) in [(left_box, left, false), (right_box, right, true)] {
        let crop = render_eye(spec).crop;
        let scale = CROP_SIZE as f64 / region.width();
        let px0 = region.x0.floor().max(0.0) as u32;
        let py0 = region.y0.floor().max(0.0) as u32;
        let px1 = (region.x1.ceil() as u32).min(width);
        let py1 = (region.y1.ceil() as u32).min(height);
        for y in py0..py1 {
            for x in px0..px1 {
                let u = (x as f64 + 0.5 - region.x0) * scale - 0.5;
                let v = (y as f64 + 0.5 - region.y0) * scale - 0.5;
                if u < -0.5 || v < -0.5 || u > CROP_SIZE as f64 - 0.5 || v > CROP_SIZE as f64 - 0.5
                {
                    continue;
                }
                let u = u.clamp(0.0, (CROP_SIZE - 1) as f64);
                let v = v.clamp(0.0, (CROP_SIZE - 1) as f64);
                let (ui, vi) = (u.floor() as usize, v.floor() as usize);
                let (u1, v1) = ((ui + 1).min(CROP_SIZE - 1), (vi + 1).min(CROP_SIZE - 1));
                let (fu, fv) = (u - ui as f64, v - vi as f64);
                let col = |c: usize| -> usize {
                    if mirror {
                        CROP_SIZE - 1 - c
                    } else {
                        c
                    }
                };
                let mut rgb = [0u8; 3];
                for (k, out) in rgb.iter_mut().enumerate() {
                    let p = |yy: usize, xx: usize| crop.at(yy, col(xx), k) as f64;
                    let top = p(vi, ui) * (1.0 - fu) + p(vi, u1) * fu;
                    let bottom = p(v1, ui) * (1.0 - fu) + p(v1, u1) * fu;
                    *out = ((top * (1.0 - fv) + bottom * fv) * 255.0)
                        .round()
                        .clamp(0.0, 255.0) as u8;
                }
                img.put_pixel(x, y, Rgb(rgb));
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eyes::{detect_landmarks, Frame, MeanShapeAdapter};
    use crate::synth::EyeState;

    #[test]
    fn frontal_face_landmarks_fall_inside_rendered_eyes() {
        let (w, h) = (320, 240);
        let face = default_face_box(w, h);
        let open = SyntheticEyeSpec::new(EyeState::Open, 1);
        let img = render_face(w, h, face, &open, &open);
        let lm = detect_landmarks(&MeanShapeAdapter::default(), &Frame::from_image(img)).unwrap();
        let (left, right) = eye_regions(face);
        for (side, region) in [(EyeSide::Left, left), (EyeSide::Right, right)] {
            for &[x, y] in lm.eye_points(side) {
                assert!(
                    x > region.x0 && x < region.x1 && y > region.y0 && y < region.y1,
                    "{side} point ({x}, {y}) outside {region:?}"
                );
            }
        }
    }
}
