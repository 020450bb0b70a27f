//! Four-level encoder-decoder networks built from either block kind.

mod report;
mod segnet;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::UpsampleMode;
use crate::error::{Error, Result};
use crate::nn::blocks::{DEFAULT_DILATION_RATES, DEFAULT_SPLIT_DIVISORS};
use crate::nn::SduBlockConfig;

pub use report::{ParameterReport, ParameterRow, ReferenceTotal, REFERENCE_TOTALS};
pub use segnet::{build_model, threshold_masks, ForwardOptions, LevelRf, MaskBatch, SegModel};

/// Number of resolution levels; inputs must be divisible by `2^(LEVELS-1)`.
pub const LEVELS: usize = 4;
pub const SPATIAL_MULTIPLE: usize = 1 << (LEVELS - 1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Stacked dilated block.
    Sdu,
    /// Two 3x3 convolutions (the U-Net baseline).
    DoubleConv,
    /// One 3x3 convolution per level, for comparisons.
    SingleConv,
}

impl BlockKind {
    pub fn arch_name(self) -> &'static str {
        match self {
            BlockKind::Sdu => "sdu",
            BlockKind::DoubleConv => "unet",
            BlockKind::SingleConv => "single",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.arch_name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sdu" | "sdu-net" | "sdunet" => Ok(BlockKind::Sdu),
            "unet" | "u-net" | "double_conv" | "double-conv" => Ok(BlockKind::DoubleConv),
            "single" | "single_conv" | "single-conv" => Ok(BlockKind::SingleConv),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected sdu, unet or single)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    /// One sigmoid output per foreground class.
    pub out_channels: usize,
    pub widths: Vec<usize>,
    pub block_kind: BlockKind,
    pub use_norm: bool,
    pub upsample_mode: UpsampleMode,
    #[serde(default = "default_split")]
    pub split_divisors: Vec<usize>,
    #[serde(default = "default_rates")]
    pub dilation_rates: Vec<usize>,
}

fn default_split() -> Vec<usize> {
    DEFAULT_SPLIT_DIVISORS.to_vec()
}

fn default_rates() -> Vec<usize> {
    DEFAULT_DILATION_RATES.to_vec()
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            out_channels: 1,
            widths: vec![64, 128, 256, 512],
            block_kind: BlockKind::Sdu,
            use_norm: true,
            upsample_mode: UpsampleMode::Bilinear,
            split_divisors: default_split(),
            dilation_rates: default_rates(),
        }
    }
}

impl ModelConfig {
    pub fn new(block_kind: BlockKind) -> Self {
        ModelConfig {
            block_kind,
            ..Default::default()
        }
    }

    pub fn with_widths(mut self, widths: &[usize]) -> Self {
        self.widths = widths.to_vec();
        self
    }

    pub fn with_norm(mut self, on: bool) -> Self {
        self.use_norm = on;
        self
    }

    pub fn with_kind(mut self, kind: BlockKind) -> Self {
        self.block_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("in_channels and out_channels must be >= 1".into()));
        }
        if self.widths.len() != LEVELS {
            return Err(Error::Config(format!(
                "expected {LEVELS} widths, got {}",
                self.widths.len()
            )));
        }
        if self.widths[0] == 0 || self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "widths {:?} must be positive and strictly increasing",
                self.widths
            )));
        }
        if self.block_kind == BlockKind::Sdu {
            for (i, &w) in self.widths.iter().enumerate() {
                let n_in = if i == 0 { self.in_channels } else { self.widths[i - 1] };
                self.sdu_config(n_in, w).validate().map_err(|e| {
                    Error::Config(format!("width {w} at level {}: {e}", i + 1))
                })?;
            }
        }
        Ok(())
    }

    pub(crate) fn sdu_config(&self, n_in: usize, n_out: usize) -> SduBlockConfig {
        SduBlockConfig {
            n_in,
            n_out,
            split_divisors: self.split_divisors.clone(),
            dilation_rates: self.dilation_rates.clone(),
            use_norm: self.use_norm,
            stem: None,
        }
    }
}

/// Parses `"16,32,64,128"`.
pub fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad width {p:?} in {s:?}")))
        })
        .collect()
}
