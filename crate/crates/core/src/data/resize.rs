//! Dataset resizing with the same sampling grid as the network's upsampler.

use crate::autodiff::resample::{nearest_index, resample_planes};
use crate::autodiff::UpsampleMode;

/// Bilinear resize of `planes` planar channels.
pub fn resize_image(data: &[f32], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return data.to_vec();
    }
    resample_planes(data, planes, h, w, oh, ow, UpsampleMode::Bilinear)
}

/// Nearest-neighbour resize; labels are copied, never interpolated.
pub fn resize_mask(data: &[u8], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    if (h, w) == (oh, ow) {
        return data.to_vec();
    }
    let ys = nearest_index(h, oh);
    let xs = nearest_index(w, ow);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        for &iy in &ys {
            out.extend(xs.iter().map(|&ix| src[iy * w + ix]));
        }
    }
    out
}
