use crate::autodiff::{ConvSpec, RunningStats, Tape, Var};
use crate::error::Result;
use crate::nn::{join, Layer, Param, ParamRole, RfOp};
use crate::tensor::{Scalar, Shape, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

/// Square convolution with bias. Weights start at zero; see [`crate::nn::kaiming_init`].
#[derive(Clone, Debug)]
pub struct Conv2d<S: Scalar> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    pub spec: ConvSpec,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(c_in: usize, c_out: usize, spec: ConvSpec) -> Self {
        let (kh, kw) = spec.kernel;
        Conv2d {
            weight: Param::new(ParamRole::Weight, Tensor::zeros(Shape::new(c_out, c_in, kh, kw))),
            bias: Param::new(ParamRole::Bias, Tensor::zeros(Shape::vector(c_out))),
            spec,
        }
    }

    /// 3x3 convolution with padding equal to the dilation.
    pub fn same3x3(c_in: usize, c_out: usize, dilation: usize) -> Self {
        Self::new(c_in, c_out, ConvSpec::same(3, dilation))
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }
}

impl<S: Scalar> Layer<S> for Conv2d<S> {
    fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let w = self.weight.register(tape);
        let b = self.bias.register(tape);
        tape.conv2d(x, w, Some(b), self.spec)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }

    fn rf_op(&self) -> RfOp {
        RfOp::Conv {
            kernel: self.spec.kernel.0,
            dilation: self.spec.dilation.0,
            stride: self.spec.stride.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<S: Scalar> {
    pub scale: Param<S>,
    pub shift: Param<S>,
    pub running_mean: Param<S>,
    pub running_var: Param<S>,
    pub eps: f64,
    pub momentum: f64,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        let v = Shape::vector(channels);
        BatchNorm2d {
            scale: Param::new(ParamRole::Scale, Tensor::full(v, S::one())),
            shift: Param::new(ParamRole::Shift, Tensor::zeros(v)),
            running_mean: Param::new(ParamRole::RunningMean, Tensor::zeros(v)),
            running_var: Param::new(ParamRole::RunningVar, Tensor::full(v, S::one())),
            eps: NORM_EPS,
            momentum: NORM_MOMENTUM,
        }
    }
}

impl<S: Scalar> Layer<S> for BatchNorm2d<S> {
    fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let scale = self.scale.register(tape);
        let shift = self.shift.register(tape);
        let running = RunningStats {
            mean_key: self.running_mean.id(),
            var_key: self.running_var.id(),
            mean: self.running_mean.value().data(),
            var: self.running_var.value().data(),
            momentum: self.momentum,
        };
        tape.batch_norm(x, scale, shift, running, self.eps)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        f(&join(prefix, "scale"), &self.scale);
        f(&join(prefix, "shift"), &self.shift);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        f(&join(prefix, "scale"), &mut self.scale);
        f(&join(prefix, "shift"), &mut self.shift);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }

    fn rf_op(&self) -> RfOp {
        RfOp::Pointwise
    }
}

/// Convolution, optional batch normalization, then ReLU.
#[derive(Clone, Debug)]
pub struct ConvUnit<S: Scalar> {
    pub conv: Conv2d<S>,
    pub norm: Option<BatchNorm2d<S>>,
}

impl<S: Scalar> ConvUnit<S> {
    pub fn new(conv: Conv2d<S>, use_norm: bool) -> Self {
        let norm = use_norm.then(|| BatchNorm2d::new(conv.out_channels()));
        ConvUnit { conv, norm }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels()
    }
}

impl<S: Scalar> Layer<S> for ConvUnit<S> {
    fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(tape, x)?;
        if let Some(norm) = &self.norm {
            y = norm.forward(tape, y)?;
        }
        Ok(tape.relu(y))
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        if let Some(norm) = &self.norm {
            norm.visit(&join(prefix, "norm"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        if let Some(norm) = &mut self.norm {
            norm.visit_mut(&join(prefix, "norm"), f);
        }
    }

    fn rf_op(&self) -> RfOp {
        self.conv.rf_op()
    }
}
