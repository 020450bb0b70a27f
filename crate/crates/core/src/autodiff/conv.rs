//! 2-D convolution kernels.
//!
//! The production path gathers receptive-field patches into a column matrix
//! and hands the contraction to GEMM. [`conv2d_direct`] is a plain nested
//! loop kept as the oracle for tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{MatMut, MatRef, Scalar, Shape, Tensor};

/// Geometry of a 2-D convolution. Padding is always zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvSpec {
    /// Square `k x k` kernel, stride 1, padding `d * (k - 1) / 2`, dilation `d`.
    ///
    /// For odd `k` this preserves spatial extents.
    pub fn same(k: usize, d: usize) -> Self {
        let p = d * (k.saturating_sub(1)) / 2;
        ConvSpec {
            kernel: (k, k),
            stride: (1, 1),
            padding: (p, p),
            dilation: (d, d),
        }
    }

    pub fn pointwise() -> Self {
        Self::same(1, 1)
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn with_padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn effective_kernel(&self) -> (usize, usize) {
        (
            self.dilation.0 * (self.kernel.0 - 1) + 1,
            self.dilation.1 * (self.kernel.1 - 1) + 1,
        )
    }

    fn validate(&self) -> Result<()> {
        let pairs = [
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("dilation", self.dilation),
        ];
        for (name, (a, b)) in pairs {
            if a == 0 || b == 0 {
                return Err(Error::InvalidArgument(format!("conv {name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Output extents for an `h x w` input.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let (eh, ew) = self.effective_kernel();
        let ph = h + 2 * self.padding.0;
        let pw = w + 2 * self.padding.1;
        if eh > ph {
            return Err(Error::shape(
                "height",
                format!("effective kernel {eh} exceeds padded input {ph}"),
            ));
        }
        if ew > pw {
            return Err(Error::shape(
                "width",
                format!("effective kernel {ew} exceeds padded input {pw}"),
            ));
        }
        Ok(((ph - eh) / self.stride.0 + 1, (pw - ew) / self.stride.1 + 1))
    }

    fn is_identity_gather(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

/// Resolved geometry for one (input, weight, spec) triple.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub oh: usize,
    pub ow: usize,
    pub spec: ConvSpec,
}

impl ConvGeom {
    pub fn new(input: Shape, weight: Shape, bias: Option<Shape>, spec: ConvSpec) -> Result<Self> {
        if weight.c != input.c {
            return Err(Error::shape(
                "channel",
                format!("weight expects {} input channels, input has {}", weight.c, input.c),
            ));
        }
        if (weight.h, weight.w) != spec.kernel {
            return Err(Error::shape(
                "height",
                format!(
                    "weight kernel {}x{} disagrees with spec {:?}",
                    weight.h, weight.w, spec.kernel
                ),
            ));
        }
        if let Some(b) = bias {
            if b.numel() != weight.n {
                return Err(Error::shape(
                    "channel",
                    format!("bias has {} entries for {} output channels", b.numel(), weight.n),
                ));
            }
        }
        let (oh, ow) = spec.output_extent(input.h, input.w)?;
        Ok(ConvGeom {
            c_in: input.c,
            h: input.h,
            w: input.w,
            c_out: weight.n,
            oh,
            ow,
            spec,
        })
    }

    /// Rows of the column matrix.
    pub fn patch(&self) -> usize {
        self.c_in * self.spec.kernel.0 * self.spec.kernel.1
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output-column range `[lo, hi)` for a kernel tap whose input
    /// column is `o * stride + shift`.
    fn valid_range(out: usize, stride: usize, shift: isize, input: usize) -> (usize, usize) {
        let mut lo = 0usize;
        while lo < out && (lo as isize * stride as isize + shift) < 0 {
            lo += 1;
        }
        let mut hi = out;
        while hi > lo && ((hi - 1) as isize * stride as isize + shift) >= input as isize {
            hi -= 1;
        }
        (lo, hi)
    }

    /// Gathers one image (`c_in x h x w`) into `cols` (`patch x oh*ow`).
    fn im2col<S: Scalar>(&self, image: &[S], cols: &mut [S]) {
        let (kh, kw) = self.spec.kernel;
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        let (dh, dw) = self.spec.dilation;
        let plane = self.out_plane();
        for ci in 0..self.c_in {
            let src = &image[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..kh {
                let shift_y = (ky * dh) as isize - ph as isize;
                let (ylo, yhi) = Self::valid_range(self.oh, sh, shift_y, self.h);
                for kx in 0..kw {
                    let shift_x = (kx * dw) as isize - pw as isize;
                    let (xlo, xhi) = Self::valid_range(self.ow, sw, shift_x, self.w);
                    let row = (ci * kh + ky) * kw + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    dst.fill(S::zero());
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = (oy as isize * sh as isize + shift_y) as usize;
                        let srow = &src[iy * self.w..(iy + 1) * self.w];
                        let drow = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if sw == 1 {
                            let ix0 = (xlo as isize + shift_x) as usize;
                            drow[xlo..xhi].copy_from_slice(&srow[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                let ix = (ox as isize * sw as isize + shift_x) as usize;
                                drow[ox] = srow[ix];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatters `cols` back onto an image gradient, summing overlaps.
    fn col2im<S: Scalar>(&self, cols: &[S], image: &mut [S]) {
        let (kh, kw) = self.spec.kernel;
        let (sh, sw) = self.spec.stride;
        let (ph, pw) = self.spec.padding;
        let (dh, dw) = self.spec.dilation;
        let plane = self.out_plane();
        image.fill(S::zero());
        for ci in 0..self.c_in {
            let dst = &mut image[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..kh {
                let shift_y = (ky * dh) as isize - ph as isize;
                let (ylo, yhi) = Self::valid_range(self.oh, sh, shift_y, self.h);
                for kx in 0..kw {
                    let shift_x = (kx * dw) as isize - pw as isize;
                    let (xlo, xhi) = Self::valid_range(self.ow, sw, shift_x, self.w);
                    let row = (ci * kh + ky) * kw + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in ylo..yhi {
                        let iy = (oy as isize * sh as isize + shift_y) as usize;
                        let drow = &mut dst[iy * self.w..(iy + 1) * self.w];
                        let srow = &src[oy * self.ow..(oy + 1) * self.ow];
                        for ox in xlo..xhi {
                            let ix = (ox as isize * sw as isize + shift_x) as usize;
                            drow[ix] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution over a batch.
pub(crate) fn forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: ConvSpec,
) -> Result<Tensor<S>> {
    let g = ConvGeom::new(input.shape(), weight.shape(), bias.map(|b| b.shape()), spec)?;
    let n = input.shape().n;
    let out_shape = Shape::new(n, g.c_out, g.oh, g.ow);
    let mut out = vec![S::zero(); out_shape.numel()];
    let plane = g.out_plane();
    let patch = g.patch();
    let w = weight.data();
    out.par_chunks_mut(g.c_out * plane)
        .enumerate()
        .for_each(|(i, dst)| {
            let image = input.batch_item(i);
            let mut scratch = Vec::new();
            let cols: &[S] = if spec.is_identity_gather() {
                image
            } else {
                scratch.resize(patch * plane, S::zero());
                g.im2col(image, &mut scratch);
                &scratch
            };
            S::gemm(
                g.c_out,
                patch,
                plane,
                S::one(),
                MatRef::row_major(w, patch),
                MatRef::row_major(cols, plane),
                S::zero(),
                MatMut::row_major(dst, plane),
            );
            if let Some(b) = bias {
                for (co, row) in dst.chunks_mut(plane).enumerate() {
                    let bv = b.data()[co];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    Tensor::from_vec(out_shape, out)
}

pub(crate) struct ConvGrads<S> {
    pub input: Option<Vec<S>>,
    pub weight: Option<Vec<S>>,
    pub bias: Option<Vec<S>>,
}

/// Vector-Jacobian products of [`forward`] for upstream gradient `dout`.
pub(crate) fn backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    spec: ConvSpec,
    dout: &[S],
    need: (bool, bool, bool),
) -> Result<ConvGrads<S>> {
    let g = ConvGeom::new(input.shape(), weight.shape(), None, spec)?;
    let n = input.shape().n;
    let plane = g.out_plane();
    let patch = g.patch();
    let item_out = g.c_out * plane;
    let w = weight.data();

    let dinput = need.0.then(|| {
        let mut dx = vec![S::zero(); input.numel()];
        dx.par_chunks_mut(input.shape().item())
            .enumerate()
            .for_each(|(i, dst)| {
                let dy = &dout[i * item_out..(i + 1) * item_out];
                if spec.is_identity_gather() {
                    S::gemm(
                        patch,
                        g.c_out,
                        plane,
                        S::one(),
                        MatRef::transposed(w, patch),
                        MatRef::row_major(dy, plane),
                        S::zero(),
                        MatMut::row_major(dst, plane),
                    );
                } else {
                    let mut cols = vec![S::zero(); patch * plane];
                    S::gemm(
                        patch,
                        g.c_out,
                        plane,
                        S::one(),
                        MatRef::transposed(w, patch),
                        MatRef::row_major(dy, plane),
                        S::zero(),
                        MatMut::row_major(&mut cols, plane),
                    );
                    g.col2im(&cols, dst);
                }
            });
        dx
    });

    let dweight = need.1.then(|| {
        // Per-image partials reduced in batch order keep the result
        // independent of the thread count.
        let partials: Vec<Vec<S>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let image = input.batch_item(i);
                let dy = &dout[i * item_out..(i + 1) * item_out];
                let mut scratch = Vec::new();
                let cols: &[S] = if spec.is_identity_gather() {
                    image
                } else {
                    scratch.resize(patch * plane, S::zero());
                    g.im2col(image, &mut scratch);
                    &scratch
                };
                let mut dw = vec![S::zero(); g.c_out * patch];
                S::gemm(
                    g.c_out,
                    plane,
                    patch,
                    S::one(),
                    MatRef::row_major(dy, plane),
                    MatRef::transposed(cols, plane),
                    S::zero(),
                    MatMut::row_major(&mut dw, patch),
                );
                dw
            })
            .collect();
        let mut iter = partials.into_iter();
        let mut acc = iter.next().unwrap_or_default();
        for p in iter {
            acc.iter_mut().zip(&p).for_each(|(a, &b)| *a += b);
        }
        acc
    });

    let dbias = need.2.then(|| {
        let mut db = vec![S::zero(); g.c_out];
        for i in 0..n {
            for (co, acc) in db.iter_mut().enumerate() {
                let start = i * item_out + co * plane;
                *acc += dout[start..start + plane].iter().copied().sum::<S>();
            }
        }
        db
    });

    Ok(ConvGrads {
        input: dinput,
        weight: dweight,
        bias: dbias,
    })
}

/// Direct nested-loop convolution. Slow; exists as an independent oracle.
pub fn conv2d_direct<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: ConvSpec,
) -> Result<Tensor<S>> {
    let g = ConvGeom::new(input.shape(), weight.shape(), bias.map(|b| b.shape()), spec)?;
    let n = input.shape().n;
    let (kh, kw) = spec.kernel;
    let shape = Shape::new(n, g.c_out, g.oh, g.ow);
    let mut out = Tensor::zeros(shape);
    for b in 0..n {
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = bias.map_or(S::zero(), |t| t.data()[co]);
                    for ci in 0..g.c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * spec.stride.0 + ky * spec.dilation.0) as isize
                                    - spec.padding.0 as isize;
                                let ix = (ox * spec.stride.1 + kx * spec.dilation.1) as isize
                                    - spec.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += input.get(b, ci, iy as usize, ix as usize)
                                    * weight.get(co, ci, ky, kx);
                            }
                        }
                    }
                    out.set(b, co, oy, ox, acc);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn output_extent_formula() {
        assert_eq!(ConvSpec::same(3, 1).output_extent(8, 8).unwrap(), (8, 8));
        assert_eq!(ConvSpec::same(3, 2).output_extent(64, 64).unwrap(), (64, 64));
        let s = ConvSpec::same(3, 1).with_stride(2).with_padding(0);
        assert_eq!(s.output_extent(7, 8).unwrap(), (3, 3));
    }

    #[test]
    fn oversized_kernel_names_axis() {
        let s = ConvSpec::same(3, 4).with_padding(0);
        let err = s.output_extent(5, 20).unwrap_err().to_string();
        assert!(err.contains("height"), "{err}");
        let err = s.output_extent(20, 5).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(3, 1, 3, 3));
        let err = forward(&x, &w, None, ConvSpec::same(3, 1)).unwrap_err();
        assert!(err.to_string().contains("channel"));
    }

    #[test]
    fn impulse_through_ones_kernel() {
        let mut x = Tensor::<f64>::zeros(Shape::new(1, 1, 3, 3));
        x.set(0, 0, 1, 1, 1.0);
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let b = Tensor::zeros(Shape::vector(1));
        let y = forward(&x, &w, Some(&b), ConvSpec::same(3, 1)).unwrap();
        assert_eq!(y.data(), &[1.0; 9]);
        assert_eq!(conv2d_direct(&x, &w, Some(&b), ConvSpec::same(3, 1)).unwrap(), y);
    }

    #[test]
    fn gemm_path_matches_direct_for_assorted_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p, d, h, w) in &[
            (3, 1, 1, 1, 6, 5),
            (3, 1, 2, 2, 7, 7),
            (3, 2, 1, 1, 9, 6),
            (1, 1, 0, 1, 4, 4),
            (2, 2, 0, 1, 6, 6),
            (3, 1, 0, 3, 9, 10),
            (3, 3, 4, 2, 11, 8),
        ] {
            let spec = ConvSpec {
                kernel: (k, k),
                stride: (s, s),
                padding: (p, p),
                dilation: (d, d),
            };
            let x = random(Shape::new(2, 3, h, w), &mut rng);
            let wt = random(Shape::new(4, 3, k, k), &mut rng);
            let b = random(Shape::vector(4), &mut rng);
            let fast = forward(&x, &wt, Some(&b), spec).unwrap();
            let slow = conv2d_direct(&x, &wt, Some(&b), spec).unwrap();
            let (oh, ow) = spec.output_extent(h, w).unwrap();
            assert_eq!(fast.shape(), Shape::new(2, 4, oh, ow));
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{spec:?}");
        }
    }
}
