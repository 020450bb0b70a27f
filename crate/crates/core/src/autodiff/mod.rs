//! Reverse-mode automatic differentiation over NCHW tensors.
//!
//! A [`Tape`] records every operation eagerly: the forward value is computed
//! immediately and stored together with whatever the backward pass needs.
//! [`Tape::backward`] then walks the record once, newest to oldest, and
//! leaves gradients on every leaf that asked for one. Node indices double as
//! a topological order, since an op can only reference existing nodes.
//!
//! The tape is single-threaded; individual kernels may split work across the
//! rayon pool, but every reduction happens in a fixed order so results do not
//! depend on the thread count.

pub mod conv;
pub(crate) mod norm;
pub(crate) mod pool;
pub mod resample;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::loss::BiDiceTerms;
use crate::tensor::{Scalar, Shape, Tensor};

pub use conv::{conv2d_direct, ConvSpec};
pub use resample::UpsampleMode;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Process-unique identity of a model parameter, used to route gradients
/// from a tape back to the tensor they belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    pub fn fresh() -> Self {
        static NEXT: AtomicU64 = AtomicU64::new(1);
        ParamId(NEXT.fetch_add(1, Ordering::Relaxed))
    }
}

/// Whether normalization layers use batch statistics (and report them) or
/// their running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Inference,
}

/// Running statistics a normalization layer exposes to the tape.
pub struct RunningStats<'a, S> {
    pub mean_key: ParamId,
    pub var_key: ParamId,
    pub mean: &'a [S],
    pub var: &'a [S],
    pub momentum: f64,
}

/// Batch statistics observed by a training-mode normalization, waiting to
/// be folded into the layer's running estimates.
#[derive(Clone, Debug)]
pub struct BatchStatRecord<S> {
    pub mean_key: ParamId,
    pub var_key: ParamId,
    pub mean: Vec<S>,
    pub var_unbiased: Vec<S>,
    pub momentum: f64,
}

enum Op<S> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        input: Var,
        mode: UpsampleMode,
    },
    Concat {
        parts: Vec<Var>,
    },
    Slice {
        input: Var,
        start: usize,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Norm {
        input: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
        batch: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: S,
    },
    Offset {
        input: Var,
    },
    Sum {
        input: Var,
    },
    BiDice {
        pred: Var,
        truth: Vec<S>,
        terms: Vec<BiDiceTerms<S>>,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    mode: Mode,
    grad_enabled: bool,
    params: HashMap<ParamId, Var>,
    stats: Vec<BatchStatRecord<S>>,
    consumed: bool,
}

impl<S: Scalar> Tape<S> {
    /// Training tapes record gradients; inference tapes do not, unless
    /// re-enabled with [`Tape::set_grad_enabled`].
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
            grad_enabled: mode == Mode::Train,
            params: HashMap::new(),
            stats: Vec::new(),
            consumed: false,
        }
    }

    pub fn training() -> Self {
        Self::new(Mode::Train)
    }

    pub fn inference() -> Self {
        Self::new(Mode::Inference)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Controls whether parameters registered from now on require gradients.
    pub fn set_grad_enabled(&mut self, on: bool) {
        self.grad_enabled = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every record so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.stats.clear();
        self.consumed = false;
    }

    fn push(&mut self, mut value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        value.set_requires_grad(requires_grad);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Records an input tensor; its own `requires_grad` flag is honoured.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        let rg = t.requires_grad();
        let mut t = t;
        t.zero_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a parameter leaf. Registering the same id twice returns the
    /// first handle.
    pub fn param(&mut self, id: ParamId, value: &Tensor<S>, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let rg = trainable && self.grad_enabled;
        let v = self.push(value.clone(), Op::Leaf, rg);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.node(v).value.shape()
    }

    /// Moves a value out, leaving a scalar placeholder behind.
    pub fn take_value(&mut self, v: Var) -> Tensor<S> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(Shape::scalar()))
    }

    /// Gradient left on a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.node(v).value.grad()
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&[S]> {
        self.params.get(&id).and_then(|&v| self.grad(v))
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub fn batch_stats(&self) -> &[BatchStatRecord<S>] {
        &self.stats
    }

    // ----- operators -----

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv::forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            spec,
        )?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            rg,
        ))
    }

    pub fn max_pool2x2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = pool::maxpool2x2(self.value(input))?;
        let rg = self.needs(input);
        let argmax = if rg { argmax } else { Vec::new() };
        Ok(self.push(out, Op::MaxPool { input, argmax }, rg))
    }

    pub fn upsample2x(&mut self, input: Var, mode: UpsampleMode) -> Var {
        let out = resample::upsample2x(self.value(input), mode);
        let rg = self.needs(input);
        self.push(out, Op::Upsample { input, mode }, rg)
    }

    /// Channel concatenation, parts laid out in argument order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            for (axis, a, b) in [("batch", s.n, s0.n), ("height", s.h, s0.h), ("width", s.w, s0.w)] {
                if a != b {
                    return Err(Error::shape(axis, format!("cannot concatenate {s} with {s0}")));
                }
            }
            channels += s.c;
        }
        let out_shape = s0.with_channels(channels);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for &p in parts {
                data.extend_from_slice(self.value(p).batch_item(n));
            }
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_vec(out_shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Channels `start..start + len` of `input`.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(input);
        if len == 0 || start + len > s.c {
            return Err(Error::shape(
                "channel",
                format!("slice {start}..{} out of {} channels", start + len, s.c),
            ));
        }
        let out_shape = s.with_channels(len);
        let plane = s.plane();
        let x = self.value(input);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n {
            let item = x.batch_item(n);
            data.extend_from_slice(&item[start * plane..(start + len) * plane]);
        }
        let rg = self.needs(input);
        Ok(self.push(Tensor::from_vec(out_shape, data)?, Op::Slice { input, start }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(S::zero())).collect();
        let out = Tensor::from_vec(x.shape(), data).expect("same shape");
        let rg = self.needs(input);
        self.push(out, Op::Relu { input }, rg)
    }

    /// Logistic function. Outputs stay strictly inside (0, 1) even when the
    /// exact value would round to an endpoint.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::from_vec(x.shape(), data).expect("same shape");
        let rg = self.needs(input);
        self.push(out, Op::Sigmoid { input }, rg)
    }

    /// Per-channel normalization. Training tapes normalize with batch
    /// statistics and record them for the caller; inference tapes use the
    /// running estimates.
    pub fn batch_norm(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        running: RunningStats<'_, S>,
        eps: f64,
    ) -> Result<Var> {
        let s = self.shape(input);
        for v in [scale, shift] {
            if self.value(v).numel() != s.c {
                return Err(Error::shape(
                    "channel",
                    format!("norm parameter of {} entries for {} channels", self.value(v).numel(), s.c),
                ));
            }
        }
        if running.mean.len() != s.c || running.var.len() != s.c {
            return Err(Error::shape("channel", "running statistics length"));
        }
        let eps = S::lit(eps);
        let batch = self.mode == Mode::Train;
        let (mean, inv_std) = if batch {
            let st = norm::batch_stats(self.value(input))?;
            let inv: Vec<S> = st.var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
            let bessel = S::lit(st.count as f64 / (st.count - 1) as f64);
            self.stats.push(BatchStatRecord {
                mean_key: running.mean_key,
                var_key: running.var_key,
                mean: st.mean.clone(),
                var_unbiased: st.var.iter().map(|&v| v * bessel).collect(),
                momentum: running.momentum,
            });
            (st.mean, inv)
        } else {
            let inv = running.var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
            (running.mean.to_vec(), inv)
        };
        let (out, xhat) = norm::affine(
            self.value(input),
            &mean,
            &inv_std,
            self.value(scale).data(),
            self.value(shift).data(),
        );
        let rg = self.needs(input) || self.needs(scale) || self.needs(shift);
        let xhat = if rg { xhat } else { Vec::new() };
        Ok(self.push(
            out,
            Op::Norm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                batch,
            },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        check_same(self.shape(a), self.shape(b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let out = Tensor::from_vec(self.shape(a), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let out = Tensor::from_vec(self.shape(a), data)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: S) -> Var {
        let x = self.value(input);
        let out = Tensor::from_vec(x.shape(), x.data().iter().map(|&v| v * factor).collect())
            .expect("same shape");
        let rg = self.needs(input);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    pub fn add_scalar(&mut self, input: Var, offset: S) -> Var {
        let x = self.value(input);
        let out = Tensor::from_vec(x.shape(), x.data().iter().map(|&v| v + offset).collect())
            .expect("same shape");
        let rg = self.needs(input);
        self.push(out, Op::Offset { input }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).sum();
        let rg = self.needs(input);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).numel();
        let s = self.sum(input);
        self.scale(s, S::one() / S::lit(n as f64))
    }

    /// Bi-Dice loss: per image and class, one minus the soft Dice of the
    /// foreground plus one minus the soft Dice of the background, smoothed by
    /// `eps`. Classes are summed and images averaged.
    ///
    /// `truth` must be binary. Predictions outside `[0, 1]` are clamped and
    /// receive no gradient.
    pub fn bi_dice_loss(&mut self, pred: Var, truth: &Tensor<S>, eps: f64) -> Result<Var> {
        let ps = self.shape(pred);
        check_same(ps, truth.shape())?;
        if !(eps > 0.0) {
            return Err(Error::InvalidArgument(format!("smoothing must be positive, got {eps}")));
        }
        if truth.data().iter().any(|&v| v != S::zero() && v != S::one()) {
            return Err(Error::InvalidArgument("ground-truth mask must be binary".into()));
        }
        let eps = S::lit(eps);
        let p = self.value(pred);
        let mut terms = Vec::with_capacity(ps.n * ps.c);
        let mut total = S::zero();
        for n in 0..ps.n {
            for c in 0..ps.c {
                let t = BiDiceTerms::compute(truth.plane(n, c), p.plane(n, c), eps);
                total += t.loss();
                terms.push(t);
            }
        }
        let loss = total / S::lit(ps.n as f64);
        let rg = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BiDice {
                pred,
                truth: truth.data().to_vec(),
                terms,
            },
            rg,
        ))
    }

    // ----- backward -----

    /// Propagates d(loss)/d(node) to every reachable node that requires a
    /// gradient. Leaf gradients are summed over fan-out and left on the
    /// tape; a tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("tape already differentiated; reset it first".into()));
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::Tape(format!("backward needs a scalar root, got {ls}")));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        if !self.needs(loss) {
            return Ok(());
        }
        grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                node.value.accumulate_grad(&g)?;
                continue;
            }
            for (v, contrib) in self.vjp(i, &g)? {
                accumulate(&mut grads[v.0], contrib);
            }
        }
        Ok(())
    }

    /// Input contributions of node `i` given its output gradient.
    fn vjp(&self, i: usize, g: &[S]) -> Result<Vec<(Var, Vec<S>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let need = (
                    self.needs(*input),
                    self.needs(*weight),
                    bias.is_some_and(|b| self.needs(b)),
                );
                let grads = conv::backward(self.value(*input), self.value(*weight), *spec, g, need)?;
                if let Some(dx) = grads.input {
                    out.push((*input, dx));
                }
                if let Some(dw) = grads.weight {
                    out.push((*weight, dw));
                }
                if let (Some(b), Some(db)) = (bias, grads.bias) {
                    out.push((*b, db));
                }
            }
            Op::MaxPool { input, argmax } => {
                out.push((*input, pool::maxpool2x2_backward(self.shape(*input), argmax, g)));
            }
            Op::Upsample { input, mode } => {
                out.push((*input, resample::upsample2x_backward(self.shape(*input), g, *mode)));
            }
            Op::Concat { parts } => {
                let s = node.value.shape();
                let plane = s.plane();
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).c;
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(s.n * c * plane);
                        for n in 0..s.n {
                            let start = (n * s.c + offset) * plane;
                            d.extend_from_slice(&g[start..start + c * plane]);
                        }
                        out.push((p, d));
                    }
                    offset += c;
                }
            }
            Op::Slice { input, start } => {
                let s = self.shape(*input);
                let c = node.value.shape().c;
                let plane = s.plane();
                let mut d = vec![S::zero(); s.numel()];
                for n in 0..s.n {
                    let dst = (n * s.c + start) * plane;
                    let src = n * c * plane;
                    d[dst..dst + c * plane].copy_from_slice(&g[src..src + c * plane]);
                }
                out.push((*input, d));
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let d = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > S::zero() { gv } else { S::zero() })
                    .collect();
                out.push((*input, d));
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let d = y.iter().zip(g).map(|(&s, &gv)| gv * s * (S::one() - s)).collect();
                out.push((*input, d));
            }
            Op::Norm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
                batch,
            } => {
                let ng = norm::affine_backward(
                    self.shape(*input),
                    xhat,
                    inv_std,
                    self.value(*scale).data(),
                    g,
                    self.needs(*input),
                    *batch,
                );
                if let Some(dx) = ng.input {
                    out.push((*input, dx));
                }
                if self.needs(*scale) {
                    out.push((*scale, ng.scale));
                }
                if self.needs(*shift) {
                    out.push((*shift, ng.shift));
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        out.push((v, g.to_vec()));
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let d = g.iter().zip(self.value(*b).data()).map(|(&x, &y)| x * y).collect();
                    out.push((*a, d));
                }
                if self.needs(*b) {
                    let d = g.iter().zip(self.value(*a).data()).map(|(&x, &y)| x * y).collect();
                    out.push((*b, d));
                }
            }
            Op::Scale { input, factor } => {
                out.push((*input, g.iter().map(|&v| v * *factor).collect()));
            }
            Op::Offset { input } => out.push((*input, g.to_vec())),
            Op::Sum { input } => {
                out.push((*input, vec![g[0]; self.value(*input).numel()]));
            }
            Op::BiDice { pred, truth, terms } => {
                let p = self.value(*pred);
                let s = p.shape();
                let plane = s.plane();
                let scale = g[0] / S::lit(s.n as f64);
                let mut d = vec![S::zero(); p.numel()];
                for (k, t) in terms.iter().enumerate() {
                    let range = k * plane..(k + 1) * plane;
                    for j in range {
                        let q = p.data()[j];
                        if q >= S::zero() && q <= S::one() {
                            d[j] = scale * t.grad(truth[j]);
                        }
                    }
                }
                out.push((*pred, d));
            }
        }
        Ok(out)
    }
}

fn check_same(sa: Shape, sb: Shape) -> Result<()> {
    if sa == sb {
        return Ok(());
    }
    let axis = if sa.n != sb.n {
        "batch"
    } else if sa.c != sb.c {
        "channel"
    } else if sa.h != sb.h {
        "height"
    } else {
        "width"
    };
    Err(Error::shape(axis, format!("{sa} vs {sb}")))
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, contrib: Vec<S>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &b)| *a += b),
        None => *slot = Some(contrib),
    }
}

fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Vec<S> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    let y = if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    };
    // largest value below one, smallest positive normal
    let top = S::one() - S::epsilon() / S::lit(2.0);
    y.max(S::min_positive_value()).min(top)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::training();
        let x = tape.input(t(Shape::new(1, 2, 2, 2), &[1., 2., 3., 4., 5., 6., 7., 8.]).requiring_grad());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 8]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::training();
        let x = tape.input(t(Shape::new(1, 1, 1, 3), &[1., -2., 3.]).requiring_grad());
        let y = tape.add(x, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0; 3]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::<f32>::training();
        let x = tape.input(Tensor::zeros(Shape::new(1, 1, 2, 2)).requiring_grad());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn second_backward_needs_reset() {
        let mut tape = Tape::<f32>::training();
        let x = tape.input(Tensor::zeros(Shape::new(1, 1, 2, 2)).requiring_grad());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(tape.backward(s).is_err());
        tape.reset();
        assert!(tape.is_empty());
    }

    #[test]
    fn relu_blocks_negative_inputs() {
        let mut tape = Tape::training();
        let x = tape.input(t(Shape::new(1, 1, 1, 4), &[-1., 2., -0.5, 3.]).requiring_grad());
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0., 1., 0., 1.]);
    }

    #[test]
    fn sigmoid_stays_in_open_interval() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        for v in [-1e4f32, -90.0, 40.0, 1e4] {
            let y = sigmoid(v);
            assert!(y > 0.0 && y < 1.0, "{v} -> {y}");
        }
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let mut tape = Tape::<f32>::inference();
        let a = tape.input(Tensor::from_fn(Shape::new(2, 3, 2, 2), |n, c, h, w| (n * 100 + c * 10 + h * 2 + w) as f32));
        let b = tape.input(Tensor::from_fn(Shape::new(2, 1, 2, 2), |n, _, h, w| -((n * 7 + h + w) as f32)));
        let cat = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.shape(cat).c, 4);
        let a2 = tape.slice_channels(cat, 0, 3).unwrap();
        let b2 = tape.slice_channels(cat, 3, 1).unwrap();
        assert_eq!(tape.value(a2).data(), tape.value(a).data());
        assert_eq!(tape.value(b2).data(), tape.value(b).data());
        let one = tape.concat_channels(&[a]).unwrap();
        assert_eq!(tape.value(one).data(), tape.value(a).data());
    }

    #[test]
    fn concat_widths_of_default_split() {
        let mut tape = Tape::<f32>::inference();
        let parts: Vec<Var> = [32, 16, 8, 4, 4]
            .iter()
            .map(|&c| tape.input(Tensor::zeros(Shape::new(1, c, 4, 4))))
            .collect();
        let cat = tape.concat_channels(&parts).unwrap();
        assert_eq!(tape.shape(cat).c, 64);
    }

    #[test]
    fn concat_spatial_mismatch_rejected() {
        let mut tape = Tape::<f32>::inference();
        let a = tape.input(Tensor::zeros(Shape::new(1, 1, 4, 4)));
        let b = tape.input(Tensor::zeros(Shape::new(1, 1, 4, 2)));
        let err = tape.concat_channels(&[a, b]).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn training_norm_records_statistics() {
        let mut tape = Tape::<f64>::training();
        let x = tape.input(Tensor::from_fn(Shape::new(2, 1, 1, 2), |n, _, _, w| (n * 2 + w) as f64));
        let g = tape.param(ParamId::fresh(), &Tensor::full(Shape::vector(1), 1.0), true);
        let b = tape.param(ParamId::fresh(), &Tensor::zeros(Shape::vector(1)), true);
        let key = ParamId::fresh();
        let running = RunningStats {
            mean_key: key,
            var_key: ParamId::fresh(),
            mean: &[0.0],
            var: &[1.0],
            momentum: 0.1,
        };
        tape.batch_norm(x, g, b, running, 1e-5).unwrap();
        let rec = &tape.batch_stats()[0];
        assert_eq!(rec.mean_key, key);
        assert_eq!(rec.mean, vec![1.5]);
        // values 0,1,2,3: unbiased variance 5/3
        assert!((rec.var_unbiased[0] - 5.0 / 3.0).abs() < 1e-12);
    }
}
