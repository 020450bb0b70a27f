use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{ModelConfig, SegModel};
use crate::nn::{parameter_table, Layer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceTotal {
    pub network: &'static str,
    pub parameters: u64,
}

/// Reference parameter totals, printed next to this crate's own counts.
pub const REFERENCE_TOTALS: [ReferenceTotal; 4] = [
    ReferenceTotal {
        network: "SDU-Net",
        parameters: 6_028_833,
    },
    ReferenceTotal {
        network: "U-Net",
        parameters: 14_787_777,
    },
    ReferenceTotal {
        network: "AttU-Net",
        parameters: 34_877_421,
    },
    ReferenceTotal {
        network: "R2U-Net",
        parameters: 39_091_265,
    },
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub other_arch: String,
    pub other_total: u64,
    /// This total divided by the other.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub config: ModelConfig,
    /// Trainable tensors of the configured model, in definition order.
    pub rows: Vec<ParameterRow>,
    pub total: u64,
    pub total_with_norm: u64,
    pub total_without_norm: u64,
    pub ratio_vs: Option<Comparison>,
}

fn rows_of(model: &dyn Layer<f32>) -> Vec<ParameterRow> {
    parameter_table(model)
        .into_iter()
        .filter(|(_, role, _)| role.trainable())
        .map(|(name, _, shape)| {
            let dims: Vec<usize> = shape.dims().into_iter().skip_while(|&d| d == 1).collect();
            ParameterRow {
                name,
                shape: if dims.is_empty() { vec![1] } else { dims },
                count: shape.numel() as u64,
            }
        })
        .collect()
}

fn total_of(cfg: &ModelConfig) -> Result<u64> {
    let m = SegModel::<f32>::new(cfg.clone())?;
    Ok(rows_of(&m).iter().map(|r| r.count).sum())
}

impl ParameterReport {
    /// Exact counts; these depend on the configuration only.
    pub fn for_config(cfg: &ModelConfig) -> Result<Self> {
        let model = SegModel::<f32>::new(cfg.clone())?;
        let rows = rows_of(&model);
        let total = rows.iter().map(|r| r.count).sum();
        let other = total_of(&cfg.clone().with_norm(!cfg.use_norm))?;
        let (total_with_norm, total_without_norm) = if cfg.use_norm {
            (total, other)
        } else {
            (other, total)
        };
        Ok(ParameterReport {
            config: cfg.clone(),
            rows,
            total,
            total_with_norm,
            total_without_norm,
            ratio_vs: None,
        })
    }

    pub fn compare_with(mut self, other: &ModelConfig) -> Result<Self> {
        let other_total = total_of(other)?;
        self.ratio_vs = Some(Comparison {
            other_arch: other.block_kind.arch_name().to_string(),
            other_total,
            ratio: self.total as f64 / other_total as f64,
        });
        Ok(self)
    }

    /// Rows whose name starts with `prefix`, e.g. `"enc1."`.
    pub fn subtotal(&self, prefix: &str) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .map(|r| r.count)
            .sum()
    }
}

impl fmt::Display for ParameterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        writeln!(f, "{:<width$}  {:<16}  {:>10}", "name", "shape", "count")?;
        for r in &self.rows {
            let shape = r.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            writeln!(f, "{:<width$}  {:<16}  {:>10}", r.name, shape, r.count)?;
        }
        writeln!(
            f,
            "total ({}, norm={}): {}",
            self.config.block_kind, self.config.use_norm, self.total
        )?;
        writeln!(
            f,
            "with norm: {}  without norm: {}",
            self.total_with_norm, self.total_without_norm
        )?;
        if let Some(c) = &self.ratio_vs {
            writeln!(f, "ratio vs {} ({}): {:.4}", c.other_arch, c.other_total, c.ratio)?;
        }
        Ok(())
    }
}
