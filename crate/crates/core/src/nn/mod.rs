//! Layers, parameter bookkeeping and the two per-resolution operations:
//! the double 3x3 convolution of U-Net and the stacked dilated block.
//!
//! Layers are immutable during a forward pass. Gradients and batch
//! statistics collected on a [`Tape`] are folded back into the layer by
//! [`absorb_tape`], which keeps frozen models shareable across threads.

pub mod blocks;
pub mod init;
pub mod layers;
pub mod receptive;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub use blocks::{Block, DoubleConv, SduBlock, SduBlockConfig};
pub use init::kaiming_init;
pub use layers::{BatchNorm2d, Conv2d, ConvUnit};
pub use receptive::{receptive_field, ReceptiveField, RfOp, RfSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    Shift,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    /// Belongs to a normalization layer.
    pub fn is_norm(self) -> bool {
        !matches!(self, ParamRole::Weight | ParamRole::Bias)
    }
}

/// A named tensor owned by a layer: trainable weights or running buffers.
#[derive(Clone, Debug)]
pub struct Param<S: Scalar> {
    id: ParamId,
    role: ParamRole,
    value: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(role: ParamRole, value: Tensor<S>) -> Self {
        Param {
            id: ParamId::fresh(),
            role,
            value,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn role(&self) -> ParamRole {
        self.role
    }

    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<S> {
        &mut self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn register(&self, tape: &mut Tape<S>) -> Var {
        tape.param(self.id, &self.value, self.role.trainable())
    }
}

/// A node of a model: owns parameters, possibly through child layers.
pub trait Layer<S: Scalar> {
    fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var>;

    /// Visits parameters in definition order with fully-qualified names.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>));

    /// Structural description for receptive-field analysis.
    fn rf_op(&self) -> RfOp {
        RfOp::Opaque(std::any::type_name::<Self>().to_string())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Qualified name, role and shape of every parameter, in definition order.
pub fn parameter_table<S: Scalar>(layer: &dyn Layer<S>) -> Vec<(String, ParamRole, Shape)> {
    let mut out = Vec::new();
    layer.visit("", &mut |name, p| out.push((name.to_string(), p.role(), p.shape())));
    out
}

/// Number of trainable scalars.
pub fn count_trainable<S: Scalar>(layer: &dyn Layer<S>) -> usize {
    let mut n = 0;
    layer.visit("", &mut |_, p| {
        if p.role().trainable() {
            n += p.numel();
        }
    });
    n
}

/// Checks that fully-qualified names are unique.
pub fn check_unique_names<S: Scalar>(layer: &dyn Layer<S>) -> Result<()> {
    let mut seen = HashMap::new();
    let mut dup = None;
    layer.visit("", &mut |name, _| {
        if seen.insert(name.to_string(), ()).is_some() && dup.is_none() {
            dup = Some(name.to_string());
        }
    });
    match dup {
        Some(name) => Err(Error::Config(format!("duplicate parameter name {name}"))),
        None => Ok(()),
    }
}

pub fn zero_grads<S: Scalar>(layer: &mut dyn Layer<S>) {
    layer.visit_mut("", &mut |_, p| p.value_mut().zero_grad());
}

/// Folds a differentiated tape back into `layer`: parameter gradients are
/// added to each parameter's gradient slot and recorded batch statistics
/// update the running estimates.
pub fn absorb_tape<S: Scalar>(layer: &mut dyn Layer<S>, tape: &Tape<S>) -> Result<()> {
    let mut updates: HashMap<ParamId, (&[S], f64)> = HashMap::new();
    for rec in tape.batch_stats() {
        updates.insert(rec.mean_key, (&rec.mean, rec.momentum));
        updates.insert(rec.var_key, (&rec.var_unbiased, rec.momentum));
    }
    let mut err = None;
    layer.visit_mut("", &mut |name, p| {
        if let Some(g) = tape.param_grad(p.id()) {
            if let Err(e) = p.value_mut().accumulate_grad(g) {
                err.get_or_insert(Error::shape("data", format!("{name}: {e}")));
            }
        }
        if let Some(&(batch, momentum)) = updates.get(&p.id()) {
            let m = S::lit(momentum);
            let keep = S::one() - m;
            for (r, &b) in p.value_mut().data_mut().iter_mut().zip(batch) {
                *r = keep * *r + m * b;
            }
        }
    });
    err.map_or(Ok(()), Err)
}
