use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvSpec, Tape, UpsampleMode, Var};
use crate::error::{Error, Result};
use crate::models::{BlockKind, ModelConfig, LEVELS, SPATIAL_MULTIPLE};
use crate::nn::{
    join, kaiming_init, Block, Conv2d, ConvUnit, DoubleConv, Layer, Param, RfOp, RfSet, SduBlock,
    SduBlockConfig,
};
use crate::tensor::{Scalar, Shape, Tensor};

/// Decoder entry: upsample by two, then a 3x3 convolution that brings the
/// channel count down to the skip connection's width.
#[derive(Clone, Debug)]
pub struct UpStage<S: Scalar> {
    pub mode: UpsampleMode,
    pub unit: ConvUnit<S>,
}

impl<S: Scalar> Layer<S> for UpStage<S> {
    fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let u = tape.upsample2x(x, self.mode);
        self.unit.forward(tape, u)
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        self.unit.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        self.unit.visit_mut(prefix, f);
    }

    fn rf_op(&self) -> RfOp {
        let taps = match self.mode {
            UpsampleMode::Nearest => 1,
            UpsampleMode::Bilinear => 2,
        };
        RfOp::Chain(vec![RfOp::Upsample { taps }, self.unit.rf_op()])
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Multiplies the deepest encoder output by zero, so only the skip
    /// connections carry information to the decoder.
    pub zero_deepest: bool,
}

#[derive(Clone, Debug)]
pub struct SegModel<S: Scalar> {
    cfg: ModelConfig,
    pub encoder: Vec<Block<S>>,
    pub up: Vec<UpStage<S>>,
    pub decoder: Vec<Block<S>>,
    pub head: Conv2d<S>,
}

fn make_block<S: Scalar>(cfg: &ModelConfig, n_in: usize, n_out: usize) -> Result<Block<S>> {
    Ok(match cfg.block_kind {
        BlockKind::Sdu => Block::Sdu(SduBlock::new(cfg.sdu_config(n_in, n_out))?),
        BlockKind::DoubleConv => Block::Double(DoubleConv::new(n_in, n_out, cfg.use_norm)?),
        BlockKind::SingleConv => {
            let mut c = SduBlockConfig::new(n_in, n_out).with_norm(cfg.use_norm);
            c.split_divisors = vec![1];
            c.dilation_rates = vec![1];
            Block::Sdu(SduBlock::new(c)?)
        }
    })
}

/// Builds and initializes a model.
pub fn build_model<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<SegModel<S>> {
    let mut m = SegModel::new(cfg.clone())?;
    kaiming_init(&mut m, seed);
    Ok(m)
}

impl<S: Scalar> SegModel<S> {
    /// Allocates the layers with zero weights.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let w = &cfg.widths;
        let mut encoder = Vec::with_capacity(LEVELS);
        for i in 0..LEVELS {
            let n_in = if i == 0 { cfg.in_channels } else { w[i - 1] };
            encoder.push(make_block(&cfg, n_in, w[i])?);
        }
        let mut up = Vec::with_capacity(LEVELS - 1);
        let mut decoder = Vec::with_capacity(LEVELS - 1);
        for i in 0..LEVELS - 1 {
            up.push(UpStage {
                mode: cfg.upsample_mode,
                unit: ConvUnit::new(Conv2d::same3x3(w[i + 1], w[i], 1), cfg.use_norm),
            });
            decoder.push(make_block(&cfg, 2 * w[i], w[i])?);
        }
        let head = Conv2d::new(w[0], cfg.out_channels, ConvSpec::pointwise());
        Ok(SegModel {
            cfg,
            encoder,
            up,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != self.cfg.in_channels {
            return Err(Error::shape(
                "channel",
                format!("model expects {} input channels, got {s}", self.cfg.in_channels),
            ));
        }
        for (axis, v) in [("height", s.h), ("width", s.w)] {
            if v % SPATIAL_MULTIPLE != 0 {
                let lo = v / SPATIAL_MULTIPLE * SPATIAL_MULTIPLE;
                let hint = if lo == 0 {
                    format!("{}", SPATIAL_MULTIPLE)
                } else {
                    format!("{lo} or {}", lo + SPATIAL_MULTIPLE)
                };
                return Err(Error::shape(
                    axis,
                    format!(
                        "{axis} {v} is not divisible by {SPATIAL_MULTIPLE}; resize the input to {hint}"
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Per-class probabilities, same spatial extents as the input.
    pub fn forward_with(&self, tape: &mut Tape<S>, x: Var, opts: ForwardOptions) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let mut skips = Vec::with_capacity(LEVELS - 1);
        let mut h = x;
        for (i, block) in self.encoder.iter().enumerate() {
            h = block.forward(tape, h)?;
            if i + 1 < LEVELS {
                skips.push(h);
                h = tape.max_pool2x2(h)?;
            }
        }
        if opts.zero_deepest {
            h = tape.scale(h, S::zero());
        }
        for i in (0..LEVELS - 1).rev() {
            let u = self.up[i].forward(tape, h)?;
            let cat = tape.concat_channels(&[skips[i], u])?;
            h = self.decoder[i].forward(tape, cat)?;
        }
        let logits = self.head.forward(tape, h)?;
        Ok(tape.sigmoid(logits))
    }

    /// Inference-mode probabilities for a batch.
    pub fn predict(&self, images: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::inference();
        let x = tape.input(images.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.take_value(y))
    }

    /// Binary masks, `probability >= threshold`.
    pub fn predict_mask(&self, images: &Tensor<S>, threshold: f64) -> Result<MaskBatch> {
        Ok(threshold_masks(&self.predict(images)?, threshold))
    }

    /// Receptive field of every level operation, in input pixels.
    pub fn receptive_fields(&self) -> Result<Vec<LevelRf>> {
        let mut rows = Vec::new();
        let mut s = RfSet::pixel();
        let mut skips = Vec::new();
        let pool = RfOp::Pool {
            kernel: 2,
            stride: 2,
        };
        let mut record = |name: String, op: &RfOp, s: &RfSet| -> Result<RfSet> {
            let branches = op.branch_sets(s)?.iter().map(RfSet::max).collect();
            let out = op.apply(s)?;
            rows.push(LevelRf {
                name,
                jump: out.jump,
                branches,
                extents: out.extents.clone(),
            });
            Ok(out)
        };
        for (i, block) in self.encoder.iter().enumerate() {
            s = record(format!("enc{}", i + 1), &block.rf_op(), &s)?;
            if i + 1 < LEVELS {
                skips.push(s.clone());
                s = pool.apply(&s)?;
            }
        }
        for i in (0..LEVELS - 1).rev() {
            let u = self.up[i].rf_op().apply(&s)?;
            let cat = skips[i].union(&u)?;
            s = record(format!("dec{}", i + 1), &self.decoder[i].rf_op(), &cat)?;
        }
        record("head".into(), &self.head.rf_op(), &s)?;
        Ok(rows)
    }
}

impl<S: Scalar> Layer<S> for SegModel<S> {
    fn forward(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        self.forward_with(tape, x, ForwardOptions::default())
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<S>)) {
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("enc{}", i + 1)), f);
        }
        for i in (0..LEVELS - 1).rev() {
            self.up[i].visit(&join(prefix, &format!("up{}", i + 1)), f);
            self.decoder[i].visit(&join(prefix, &format!("dec{}", i + 1)), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<S>)) {
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("enc{}", i + 1)), f);
        }
        for i in (0..LEVELS - 1).rev() {
            self.up[i].visit_mut(&join(prefix, &format!("up{}", i + 1)), f);
            self.decoder[i].visit_mut(&join(prefix, &format!("dec{}", i + 1)), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Receptive field of one level operation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelRf {
    pub name: String,
    /// Input-pixel spacing of the operation's output grid.
    pub jump: usize,
    /// Largest extent reaching each branch output.
    pub branches: Vec<usize>,
    /// Every extent present in the concatenated output.
    pub extents: BTreeSet<usize>,
}

/// Binary masks laid out like the tensor they came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskBatch {
    pub shape: Shape,
    pub data: Vec<u8>,
}

impl MaskBatch {
    pub fn plane(&self, n: usize, c: usize) -> &[u8] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }
}

pub fn threshold_masks<S: Scalar>(probs: &Tensor<S>, threshold: f64) -> MaskBatch {
    let t = S::lit(threshold);
    MaskBatch {
        shape: probs.shape(),
        data: probs.data().iter().map(|&p| u8::from(p >= t)).collect(),
    }
}
