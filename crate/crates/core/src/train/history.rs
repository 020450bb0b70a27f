use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// Per-class metrics of one split after one epoch. Epoch 0 is the
/// untrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: Split,
    pub class: usize,
    pub loss: f64,
    pub dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestInfo {
    pub epoch: usize,
    /// Class-averaged mean validation Dice.
    pub val_dice: f64,
}

impl History {
    pub fn push(&mut self, row: HistoryRow) {
        self.rows.push(row);
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.rows.last().map(|r| r.epoch)
    }

    fn rows_for(&self, epoch: usize, split: Split) -> impl Iterator<Item = &HistoryRow> {
        self.rows
            .iter()
            .filter(move |r| r.epoch == epoch && r.split == split)
    }

    /// Class-averaged Dice of one epoch and split.
    pub fn dice(&self, epoch: usize, split: Split) -> Option<f64> {
        mean(self.rows_for(epoch, split).map(|r| r.dice))
    }

    /// Class-summed loss of one epoch and split.
    pub fn loss(&self, epoch: usize, split: Split) -> Option<f64> {
        let v: Vec<f64> = self.rows_for(epoch, split).map(|r| r.loss).collect();
        (!v.is_empty()).then(|| v.iter().sum())
    }

    /// Class-summed loss per epoch for one split, in epoch order.
    pub fn loss_curve(&self, split: Split) -> Vec<(usize, f64)> {
        let mut epochs: Vec<usize> = self.rows.iter().filter(|r| r.split == split).map(|r| r.epoch).collect();
        epochs.dedup();
        epochs
            .into_iter()
            .filter_map(|e| self.loss(e, split).map(|l| (e, l)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,split,class,loss,dice\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.split, r.class, r.loss, r.dice));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
