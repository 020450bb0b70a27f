//! Nearest and bilinear resampling.
//!
//! Bilinear interpolation samples at half-pixel centers without corner
//! alignment: output index `o` reads source coordinate
//! `(o + 0.5) * in / out - 0.5`, clamped to the valid range. The same taps
//! serve the 2x upsampling operator and the dataset resizer.

use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

impl std::str::FromStr for UpsampleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(UpsampleMode::Nearest),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            other => Err(format!("unknown upsample mode {other:?}")),
        }
    }
}

impl std::fmt::Display for UpsampleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        })
    }
}

/// One output position's two source indices and weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub w_lo: f64,
    pub w_hi: f64,
}

/// Bilinear taps along one axis.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = src - lo as f64;
            Tap {
                lo,
                hi,
                w_lo: 1.0 - frac,
                w_hi: frac,
            }
        })
        .collect()
}

/// Nearest-neighbour source index along one axis.
pub fn nearest_index(input: usize, output: usize) -> Vec<usize> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| ((o as f64 * scale).floor() as usize).min(input - 1))
        .collect()
}

/// Resamples every plane of `src` (`planes x h x w`) to `oh x ow`.
pub(crate) fn resample_planes<S: Scalar>(
    src: &[S],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    mode: UpsampleMode,
) -> Vec<S> {
    let mut out = vec![S::zero(); planes * oh * ow];
    match mode {
        UpsampleMode::Nearest => {
            let ys = nearest_index(h, oh);
            let xs = nearest_index(w, ow);
            for p in 0..planes {
                let s = &src[p * h * w..(p + 1) * h * w];
                let d = &mut out[p * oh * ow..(p + 1) * oh * ow];
                for (oy, &iy) in ys.iter().enumerate() {
                    for (ox, &ix) in xs.iter().enumerate() {
                        d[oy * ow + ox] = s[iy * w + ix];
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ys = bilinear_taps(h, oh);
            let xs = bilinear_taps(w, ow);
            for p in 0..planes {
                let s = &src[p * h * w..(p + 1) * h * w];
                let d = &mut out[p * oh * ow..(p + 1) * oh * ow];
                for (oy, ty) in ys.iter().enumerate() {
                    // Lerp form keeps constants exact.
                    let wy1 = S::lit(ty.w_hi);
                    for (ox, tx) in xs.iter().enumerate() {
                        let wx1 = S::lit(tx.w_hi);
                        let (a, b) = (s[ty.lo * w + tx.lo], s[ty.lo * w + tx.hi]);
                        let (c, e) = (s[ty.hi * w + tx.lo], s[ty.hi * w + tx.hi]);
                        let top = a + (b - a) * wx1;
                        let bot = c + (e - c) * wx1;
                        d[oy * ow + ox] = top + (bot - top) * wy1;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`resample_planes`]: scatters an output gradient back to the source grid.
pub(crate) fn resample_planes_adjoint<S: Scalar>(
    dout: &[S],
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    mode: UpsampleMode,
) -> Vec<S> {
    let mut dx = vec![S::zero(); planes * h * w];
    match mode {
        UpsampleMode::Nearest => {
            let ys = nearest_index(h, oh);
            let xs = nearest_index(w, ow);
            for p in 0..planes {
                let g = &dout[p * oh * ow..(p + 1) * oh * ow];
                let d = &mut dx[p * h * w..(p + 1) * h * w];
                for (oy, &iy) in ys.iter().enumerate() {
                    for (ox, &ix) in xs.iter().enumerate() {
                        d[iy * w + ix] += g[oy * ow + ox];
                    }
                }
            }
        }
        UpsampleMode::Bilinear => {
            let ys = bilinear_taps(h, oh);
            let xs = bilinear_taps(w, ow);
            for p in 0..planes {
                let g = &dout[p * oh * ow..(p + 1) * oh * ow];
                let d = &mut dx[p * h * w..(p + 1) * h * w];
                for (oy, ty) in ys.iter().enumerate() {
                    let (wy0, wy1) = (S::lit(ty.w_lo), S::lit(ty.w_hi));
                    for (ox, tx) in xs.iter().enumerate() {
                        let (wx0, wx1) = (S::lit(tx.w_lo), S::lit(tx.w_hi));
                        let v = g[oy * ow + ox];
                        d[ty.lo * w + tx.lo] += v * wy0 * wx0;
                        d[ty.lo * w + tx.hi] += v * wy0 * wx1;
                        d[ty.hi * w + tx.lo] += v * wy1 * wx0;
                        d[ty.hi * w + tx.hi] += v * wy1 * wx1;
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn upsample2x<S: Scalar>(input: &Tensor<S>, mode: UpsampleMode) -> Tensor<S> {
    let s = input.shape();
    let out_shape = Shape::new(s.n, s.c, s.h * 2, s.w * 2);
    let data = resample_planes(input.data(), s.n * s.c, s.h, s.w, s.h * 2, s.w * 2, mode);
    Tensor::from_vec(out_shape, data).expect("upsample output sized by construction")
}

pub(crate) fn upsample2x_backward<S: Scalar>(input: Shape, dout: &[S], mode: UpsampleMode) -> Vec<S> {
    resample_planes_adjoint(
        dout,
        input.n * input.c,
        input.h,
        input.w,
        input.h * 2,
        input.w * 2,
        mode,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_half_pixel_row() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 2.0]).unwrap();
        let y = upsample2x(&x, UpsampleMode::Bilinear);
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 4));
        assert_eq!(&y.data()[..4], &[0.0, 0.5, 1.5, 2.0]);
        assert_eq!(&y.data()[4..], &[0.0, 0.5, 1.5, 2.0]);
    }

    #[test]
    fn nearest_replicates_blocks() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample2x(&x, UpsampleMode::Nearest);
        assert_eq!(
            y.data(),
            &[
                1.0, 1.0, 2.0, 2.0, //
                1.0, 1.0, 2.0, 2.0, //
                3.0, 3.0, 4.0, 4.0, //
                3.0, 3.0, 4.0, 4.0
            ]
        );
    }

    #[test]
    fn bilinear_preserves_constants() {
        let x = Tensor::<f32>::full(Shape::new(2, 3, 3, 5), 0.3);
        let y = upsample2x(&x, UpsampleMode::Bilinear);
        assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn identity_taps_are_exact() {
        for t in bilinear_taps(7, 7) {
            assert_eq!(t.w_hi, 0.0);
        }
        assert_eq!(nearest_index(5, 5), vec![0, 1, 2, 3, 4]);
    }
}
