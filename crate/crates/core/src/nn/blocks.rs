//! The two per-resolution operations.
//!
//! [`DoubleConv`] is two 3x3 convolutions in sequence. [`SduBlock`] runs a
//! cascade of 3x3 convolutions with increasing dilation, where each branch
//! consumes the previous branch's output, and concatenates every branch
//! output. With the default split the branch widths are
//! `n/2, n/4, n/8, n/16, n/16`, so the concatenation has exactly `n` channels.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{join, Conv2d, ConvUnit, Layer, Param, RfOp};
use crate::tensor::Scalar;

pub const DEFAULT_SPLIT_DIVISORS: [usize; 5] = [2, 4, 8, 16, 16];
pub const DEFAULT_DILATION_RATES: [usize; 5] = [1, 2, 4, 8, 16];

#[derive(Clone, Debug)]
pub struct DoubleConv<S: Scalar> {
    pub first: ConvUnit<S>,
    pub second: ConvUnit<S>,
}

impl<S: Scalar> DoubleConv<S> {
    pub fn new(n_in: usize, n_out: usize, use_norm: bool) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::Config("double conv widths must be >= 1".into()));
        }
        Ok(DoubleConv {
            first: ConvUnit::new(Conv2d::same3x3(n_in, n_out, 1), use_norm),
            second: ConvUnit::new(Conv2d::same3x3(n_out, n_out, 1), use_norm),
        })
    }
}

impl<S: Scalar> Layer<S> for DoubleConv<S> {
    fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let y = self.first.forward(tape, x)?;
        self.second.forward(tape, y)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.first.visit(&join(prefix, "unit0"), f);
        self.second.visit(&join(prefix, "unit1"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.first.visit_mut(&join(prefix, "unit0"), f);
        self.second.visit_mut(&join(prefix, "unit1"), f);
    }

    fn rf_op(&self) -> RfOp {
        RfOp::Chain(vec![self.first.rf_op(), self.second.rf_op()])
    }
}

/// Shape of a stacked dilated block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SduBlockConfig {
    pub n_in: usize,
    pub n_out: usize,
    /// Branch `i` emits `n_out / split_divisors[i]` channels.
    pub split_divisors: Vec<usize>,
    /// Dilation of each branch's 3x3 convolution.
    pub dilation_rates: Vec<usize>,
    pub use_norm: bool,
    /// Width of an optional standard convolution ahead of the branches whose
    /// output is not concatenated. `None` (the default) makes branch 0 the
    /// standard convolution.
    pub stem: Option<usize>,
}

impl SduBlockConfig {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        SduBlockConfig {
            n_in,
            n_out,
            split_divisors: DEFAULT_SPLIT_DIVISORS.to_vec(),
            dilation_rates: DEFAULT_DILATION_RATES.to_vec(),
            use_norm: true,
            stem: None,
        }
    }

    pub fn with_norm(mut self, on: bool) -> Self {
        self.use_norm = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_out == 0 {
            return Err(Error::Config("block widths must be >= 1".into()));
        }
        if self.split_divisors.is_empty() {
            return Err(Error::Config("at least one branch is required".into()));
        }
        if self.split_divisors.len() != self.dilation_rates.len() {
            return Err(Error::Config(format!(
                "{} split fractions but {} dilation rates",
                self.split_divisors.len(),
                self.dilation_rates.len()
            )));
        }
        let mut total = 0;
        for &d in &self.split_divisors {
            if d == 0 || !self.n_out.is_multiple_of(d) {
                return Err(Error::Config(format!(
                    "branch width {}/{d} is not a positive integer",
                    self.n_out
                )));
            }
            total += self.n_out / d;
        }
        if total != self.n_out {
            return Err(Error::Config(format!(
                "split fractions cover {total} of {} output channels",
                self.n_out
            )));
        }
        if self.dilation_rates[0] == 0 || self.dilation_rates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "dilation rates {:?} must be >= 1 and strictly increasing",
                self.dilation_rates
            )));
        }
        if self.stem.is_none() && self.dilation_rates[0] != 1 {
            return Err(Error::Config("the first branch must be a standard (rate 1) convolution".into()));
        }
        if self.stem == Some(0) {
            return Err(Error::Config("stem width must be >= 1".into()));
        }
        Ok(())
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        self.split_divisors.iter().map(|d| self.n_out / d).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SduBlock<S: Scalar> {
    cfg: SduBlockConfig,
    pub stem: Option<ConvUnit<S>>,
    pub branches: Vec<ConvUnit<S>>,
}

impl<S: Scalar> SduBlock<S> {
    pub fn new(cfg: SduBlockConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = cfg
            .stem
            .map(|w| ConvUnit::new(Conv2d::same3x3(cfg.n_in, w, 1), cfg.use_norm));
        let mut c_in = cfg.stem.unwrap_or(cfg.n_in);
        let mut branches = Vec::with_capacity(cfg.split_divisors.len());
        for (width, &rate) in cfg.branch_widths().into_iter().zip(&cfg.dilation_rates) {
            branches.push(ConvUnit::new(Conv2d::same3x3(c_in, width, rate), cfg.use_norm));
            c_in = width;
        }
        Ok(SduBlock {
            cfg,
            stem,
            branches,
        })
    }

    pub fn config(&self) -> &SduBlockConfig {
        &self.cfg
    }
}

impl<S: Scalar> Layer<S> for SduBlock<S> {
    fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let mut h = match &self.stem {
            Some(stem) => stem.forward(tape, x)?,
            None => x,
        };
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            h = branch.forward(tape, h)?;
            outs.push(h);
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        tape.concat_channels(&outs)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        if let Some(stem) = &self.stem {
            stem.visit(&join(prefix, "stem"), f);
        }
        for (i, b) in self.branches.iter().enumerate() {
            b.visit(&join(prefix, &format!("branch{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        if let Some(stem) = &mut self.stem {
            stem.visit_mut(&join(prefix, "stem"), f);
        }
        for (i, b) in self.branches.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("branch{i}")), f);
        }
    }

    fn rf_op(&self) -> RfOp {
        let cascade = RfOp::Cascade(self.branches.iter().map(|b| b.rf_op()).collect());
        match &self.stem {
            Some(stem) => RfOp::Chain(vec![stem.rf_op(), cascade]),
            None => cascade,
        }
    }
}

/// One resolution's operation, either kind.
#[derive(Clone, Debug)]
pub enum Block<S: Scalar> {
    Double(DoubleConv<S>),
    Sdu(SduBlock<S>),
}

impl<S: Scalar> Layer<S> for Block<S> {
    fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        match self {
            Block::Double(b) => b.forward(tape, x),
            Block::Sdu(b) => b.forward(tape, x),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        match self {
            Block::Double(b) => b.visit(prefix, f),
            Block::Sdu(b) => b.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        match self {
            Block::Double(b) => b.visit_mut(prefix, f),
            Block::Sdu(b) => b.visit_mut(prefix, f),
        }
    }

    fn rf_op(&self) -> RfOp {
        match self {
            Block::Double(b) => b.rf_op(),
            Block::Sdu(b) => b.rf_op(),
        }
    }
}
