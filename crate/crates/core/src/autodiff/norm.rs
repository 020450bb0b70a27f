//! Per-channel batch normalization kernels.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub(crate) struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Biased variance, used for normalization.
    pub var: Vec<S>,
    pub count: usize,
}

pub(crate) fn batch_stats<S: Scalar>(x: &Tensor<S>) -> Result<BatchStats<S>> {
    let s = x.shape();
    let count = s.n * s.h * s.w;
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch normalization in training mode needs n*h*w >= 2, got {} for {s}",
            count
        )));
    }
    let mut mean = vec![S::zero(); s.c];
    let mut var = vec![S::zero(); s.c];
    let inv = S::one() / S::lit(count as f64);
    for c in 0..s.c {
        let mut acc = S::zero();
        for n in 0..s.n {
            acc += x.plane(n, c).iter().copied().sum::<S>();
        }
        let m = acc * inv;
        let mut sq = S::zero();
        for n in 0..s.n {
            sq += x.plane(n, c).iter().map(|&v| (v - m) * (v - m)).sum::<S>();
        }
        mean[c] = m;
        var[c] = sq * inv;
    }
    Ok(BatchStats { mean, var, count })
}

/// `y = scale * (x - mean) * inv_std + shift`, per channel.
pub(crate) fn affine<S: Scalar>(
    x: &Tensor<S>,
    mean: &[S],
    inv_std: &[S],
    scale: &[S],
    shift: &[S],
) -> (Tensor<S>, Vec<S>) {
    let s = x.shape();
    let plane = s.plane();
    let mut xhat = vec![S::zero(); x.numel()];
    let mut y = vec![S::zero(); x.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * plane;
            let src = x.plane(n, c);
            for i in 0..plane {
                let h = (src[i] - mean[c]) * inv_std[c];
                xhat[start + i] = h;
                y[start + i] = scale[c] * h + shift[c];
            }
        }
    }
    (Tensor::from_vec(s, y).expect("same shape"), xhat)
}

pub(crate) struct NormGrads<S> {
    pub input: Option<Vec<S>>,
    pub scale: Vec<S>,
    pub shift: Vec<S>,
}

/// Backward of training-mode normalization; `batch` selects whether the
/// statistics depended on the input (training) or were constants (inference).
pub(crate) fn affine_backward<S: Scalar>(
    x_shape: crate::tensor::Shape,
    xhat: &[S],
    inv_std: &[S],
    scale: &[S],
    dout: &[S],
    need_input: bool,
    batch: bool,
) -> NormGrads<S> {
    let s = x_shape;
    let plane = s.plane();
    let mut dscale = vec![S::zero(); s.c];
    let mut dshift = vec![S::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let start = (n * s.c + c) * plane;
            for i in start..start + plane {
                dshift[c] += dout[i];
                dscale[c] += dout[i] * xhat[i];
            }
        }
    }
    let input = need_input.then(|| {
        let mut dx = vec![S::zero(); s.numel()];
        let m = S::lit((s.n * plane) as f64);
        for c in 0..s.c {
            let k = scale[c] * inv_std[c];
            for n in 0..s.n {
                let start = (n * s.c + c) * plane;
                for i in start..start + plane {
                    dx[i] = if batch {
                        // dx = k/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
                        k / m * (m * dout[i] - dshift[c] - xhat[i] * dscale[c])
                    } else {
                        k * dout[i]
                    };
                }
            }
        }
        dx
    });
    NormGrads {
        input,
        scale: dscale,
        shift: dshift,
    }
}
