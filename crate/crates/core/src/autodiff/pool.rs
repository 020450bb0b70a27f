use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// 2x2 max pooling, stride 2. Returns the output and the flat input index
/// that won each window; ties go to the first position in row-major order.
pub(crate) fn maxpool2x2<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) {
        return Err(Error::shape("height", format!("max pooling needs an even extent, got {}", s.h)));
    }
    if !s.w.is_multiple_of(2) {
        return Err(Error::shape("width", format!("max pooling needs an even extent, got {}", s.w)));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.numel());
    let mut argmax = Vec::with_capacity(out_shape.numel());
    let x = input.data();
    for p in 0..s.n * s.c {
        let base = p * s.h * s.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * s.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out_shape, out)?, argmax))
}

pub(crate) fn maxpool2x2_backward<S: Scalar>(input: Shape, argmax: &[usize], dout: &[S]) -> Vec<S> {
    let mut dx = vec![S::zero(); input.numel()];
    for (&i, &g) in argmax.iter().zip(dout) {
        dx[i] += g;
    }
    dx
}
