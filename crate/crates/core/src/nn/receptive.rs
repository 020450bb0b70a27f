//! Analytic receptive fields.
//!
//! Extents are measured in input pixels along one axis. An [`RfSet`] carries
//! every extent reaching a feature map (several paths may be concatenated)
//! together with the map's jump, the input-pixel spacing of adjacent
//! feature positions. A convolution grows an extent by `(k - 1) * d * jump`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RfOp {
    Conv {
        kernel: usize,
        dilation: usize,
        stride: usize,
    },
    Pool {
        kernel: usize,
        stride: usize,
    },
    /// 2x upsampling where each output reads `taps` adjacent inputs.
    Upsample {
        taps: usize,
    },
    /// Does not mix spatial positions.
    Pointwise,
    Chain(Vec<RfOp>),
    /// Ops applied in sequence where every intermediate output is kept.
    Cascade(Vec<RfOp>),
    Opaque(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfSet {
    pub extents: BTreeSet<usize>,
    pub jump: usize,
}

impl RfSet {
    /// A single input pixel.
    pub fn pixel() -> Self {
        RfSet {
            extents: BTreeSet::from([1]),
            jump: 1,
        }
    }

    pub fn max(&self) -> usize {
        self.extents.iter().next_back().copied().unwrap_or(0)
    }

    fn grow(&self, by: usize) -> BTreeSet<usize> {
        self.extents.iter().map(|r| r + by).collect()
    }

    /// Extents of a channel concatenation of two maps at the same resolution.
    pub fn union(&self, other: &RfSet) -> Result<RfSet> {
        if self.jump != other.jump {
            return Err(Error::shape(
                "resolution",
                format!("cannot concatenate maps with jumps {} and {}", self.jump, other.jump),
            ));
        }
        Ok(RfSet {
            extents: self.extents.union(&other.extents).copied().collect(),
            jump: self.jump,
        })
    }
}

impl RfOp {
    pub fn apply(&self, s: &RfSet) -> Result<RfSet> {
        Ok(match self {
            RfOp::Conv {
                kernel,
                dilation,
                stride,
            } => RfSet {
                extents: s.grow((kernel - 1) * dilation * s.jump),
                jump: s.jump * stride,
            },
            RfOp::Pool { kernel, stride } => RfSet {
                extents: s.grow((kernel - 1) * s.jump),
                jump: s.jump * stride,
            },
            RfOp::Upsample { taps } => {
                if s.jump < 2 || !s.jump.is_multiple_of(2) {
                    return Err(Error::Unsupported(format!(
                        "upsampling a map with jump {} would leave the input grid",
                        s.jump
                    )));
                }
                RfSet {
                    extents: s.grow(taps.saturating_sub(1) * s.jump),
                    jump: s.jump / 2,
                }
            }
            RfOp::Pointwise => s.clone(),
            RfOp::Chain(ops) => {
                let mut cur = s.clone();
                for op in ops {
                    cur = op.apply(&cur)?;
                }
                cur
            }
            RfOp::Cascade(_) => {
                let mut parts = self.branch_sets(s)?.into_iter();
                let first = parts.next().unwrap_or_else(|| s.clone());
                parts.try_fold(first, |acc, p| acc.union(&p))?
            }
            RfOp::Opaque(name) => {
                return Err(Error::Unsupported(format!("no receptive-field rule for {name}")))
            }
        })
    }

    /// Per-branch extents for a cascade, or the single output otherwise.
    pub fn branch_sets(&self, s: &RfSet) -> Result<Vec<RfSet>> {
        match self {
            RfOp::Cascade(ops) => {
                let mut cur = s.clone();
                let mut out = Vec::with_capacity(ops.len());
                for op in ops {
                    cur = op.apply(&cur)?;
                    out.push(cur.clone());
                }
                Ok(out)
            }
            RfOp::Chain(ops) if !ops.is_empty() => {
                let (last, head) = ops.split_last().expect("non-empty");
                let mut cur = s.clone();
                for op in head {
                    cur = op.apply(&cur)?;
                }
                last.branch_sets(&cur)
            }
            _ => Ok(vec![self.apply(s)?]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptiveField {
    /// Extent of each branch output, in branch order.
    pub branches: Vec<usize>,
    /// Largest extent present in the layer output.
    pub concat: usize,
}

/// Receptive field of a layer applied to a full-resolution input.
pub fn receptive_field<S: Scalar>(layer: &dyn Layer<S>) -> Result<ReceptiveField> {
    let op = layer.rf_op();
    let start = RfSet::pixel();
    let branches = op.branch_sets(&start)?.iter().map(RfSet::max).collect();
    let concat = op.apply(&start)?.max();
    Ok(ReceptiveField { branches, concat })
}
