//! Prediction overlays: the input image with mask boundaries recolored.

use crate::data::{Image, Sample};

/// Boundary colors by class; class 0 is blue.
pub const CLASS_COLORS: [[u8; 3]; 4] = [[0, 0, 255], [255, 255, 0], [255, 0, 255], [0, 255, 0]];

/// Foreground pixels with at least one 4-neighbour outside the mask.
/// Pixels beyond the frame count as background.
pub fn boundary(mask: &[u8], h: usize, w: usize) -> Vec<bool> {
    let at = |y: isize, x: isize| -> bool {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize] != 0
    };
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !at(y, x) {
                continue;
            }
            let eroded = at(y - 1, x) && at(y + 1, x) && at(y, x - 1) && at(y, x + 1);
            out[y as usize * w + x as usize] = !eroded;
        }
    }
    out
}

/// RGB rendering of `sample` with each class's predicted boundary drawn on top.
pub fn render_overlay(sample: &Sample, channels: usize, predicted: &[u8], classes: usize) -> Image {
    let (h, w) = (sample.height, sample.width);
    let plane = h * w;
    let mut px = vec![0u8; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            let src = if channels == 3 { c } else { 0 };
            px[3 * i + c] = (sample.image[src * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    for k in 0..classes {
        let color = CLASS_COLORS[k % CLASS_COLORS.len()];
        for (i, b) in boundary(&predicted[k * plane..(k + 1) * plane], h, w).into_iter().enumerate() {
            if b {
                px[3 * i..3 * i + 3].copy_from_slice(&color);
            }
        }
    }
    Image::rgb8(w, h, px)
}
