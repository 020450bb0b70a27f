//! Flat `key = value` run configuration.
//!
//! Keys are the field names of [`ModelConfig`] and [`TrainConfig`]. Lines
//! starting with `#` and blank lines are ignored. Lists are comma separated.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{parse_widths, BlockKind, ModelConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "in_channels" => m.in_channels = parse_num(key, value)?,
            "out_channels" => m.out_channels = parse_num(key, value)?,
            "widths" => m.widths = parse_widths(value)?,
            "block_kind" | "arch" => m.block_kind = value.parse::<BlockKind>()?,
            "use_norm" => m.use_norm = parse_bool(key, value)?,
            "upsample_mode" => m.upsample_mode = value.parse().map_err(Error::Config)?,
            "split_divisors" => m.split_divisors = parse_widths(value)?,
            "dilation_rates" => m.dilation_rates = parse_widths(value)?,
            "learning_rate" => t.learning_rate = parse_num(key, value)?,
            "beta1" => t.beta1 = parse_num(key, value)?,
            "beta2" => t.beta2 = parse_num(key, value)?,
            "eps_adam" => t.eps_adam = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_num(key, value)?,
            "loss_smoothing" => t.loss_smoothing = parse_num(key, value)?,
            "threshold" => t.threshold = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Every key with its resolved value; parses back to the same config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        [
            format!("in_channels = {}", m.in_channels),
            format!("out_channels = {}", m.out_channels),
            format!("widths = {}", list(&m.widths)),
            format!("block_kind = {}", m.block_kind.arch_name()),
            format!("use_norm = {}", m.use_norm),
            format!("upsample_mode = {}", m.upsample_mode),
            format!("split_divisors = {}", list(&m.split_divisors)),
            format!("dilation_rates = {}", list(&m.dilation_rates)),
            format!("learning_rate = {:?}", t.learning_rate),
            format!("beta1 = {:?}", t.beta1),
            format!("beta2 = {:?}", t.beta2),
            format!("eps_adam = {:?}", t.eps_adam),
            format!("batch_size = {}", t.batch_size),
            format!("epochs = {}", t.epochs),
            format!("seed = {}", t.seed),
            format!("checkpoint_every = {}", t.checkpoint_every),
            format!("loss_smoothing = {:?}", t.loss_smoothing),
            format!("threshold = {:?}", t.threshold),
        ]
        .join("\n")
            + "\n"
    }
}
