use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::metrics::dice::dice_score;
use crate::metrics::loss::BiDiceTerms;
use crate::models::{build_model, ModelConfig, SegModel};
use crate::nn::{absorb_tape, Layer};
use crate::tensor::{Shape, Tensor};
use crate::train::eval::evaluate;
use crate::train::{Adam, BestInfo, Checkpoint, History, HistoryRow, Split, TrainConfig};

/// Mini-batches of one epoch: a permutation seeded by `(seed, epoch)`, cut
/// into runs of `batch`. A trailing single sample joins the previous batch,
/// since batch statistics need at least two.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    let mut out: Vec<Vec<usize>> = order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_dice: f64,
    pub val_loss: Option<f64>,
    pub val_dice: Option<f64>,
    pub improved: bool,
    /// Wall time of the epoch; informational only.
    pub seconds: f64,
}

/// Owns a model, its optimizer and its metric history.
pub struct Trainer {
    model: SegModel<f32>,
    cfg: TrainConfig,
    adam: Adam<f32>,
    epoch: usize,
    history: History,
    best: Option<BestInfo>,
    best_checkpoint: Option<Checkpoint>,
}

impl Trainer {
    /// Fresh model initialized from `cfg.seed`.
    pub fn new(model_cfg: &ModelConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = build_model(model_cfg, cfg.seed)?;
        Ok(Self::from_model(model, cfg))
    }

    pub fn from_model(model: SegModel<f32>, cfg: TrainConfig) -> Self {
        Trainer {
            model,
            adam: Adam::new(cfg.adam()),
            cfg,
            epoch: 0,
            history: History::default(),
            best: None,
            best_checkpoint: None,
        }
    }

    /// Continues from a checkpoint written with optimizer state. `cfg`
    /// overrides the stored training configuration (e.g. to extend epochs).
    pub fn resume(ck: &Checkpoint, cfg: Option<TrainConfig>) -> Result<Self> {
        let cfg = match cfg.or_else(|| ck.meta.train.clone()) {
            Some(c) => c,
            None => return Err(Error::Checkpoint("no training configuration stored".into())),
        };
        cfg.validate()?;
        let adam = ck
            .adam_state(cfg.adam())
            .ok_or_else(|| Error::Checkpoint("no optimizer state stored; cannot resume".into()))?;
        Ok(Trainer {
            model: ck.to_model()?,
            adam,
            cfg,
            epoch: ck.meta.epoch,
            history: ck.meta.history.clone(),
            best: ck.meta.best,
            best_checkpoint: None,
        })
    }

    pub fn model(&self) -> &SegModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> SegModel<f32> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn best(&self) -> Option<BestInfo> {
        self.best
    }

    pub fn adam(&self) -> &Adam<f32> {
        &self.adam
    }

    /// Full snapshot including optimizer state.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            Some(&self.cfg),
            self.epoch,
            &self.history,
            self.best,
            Some(&self.adam),
        )
    }

    /// Weights of the best epoch seen by this trainer instance.
    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        self.best_checkpoint.as_ref()
    }

    fn check_data(&self, set: &SampleSet, what: &str) -> Result<()> {
        let mc = self.model.config();
        if set.is_empty() {
            return Err(Error::Data(format!("{what} set is empty")));
        }
        if set.channels() != mc.in_channels || set.classes() != mc.out_channels {
            return Err(Error::Data(format!(
                "{what} set has {} channels and {} classes; model expects {} and {}",
                set.channels(),
                set.classes(),
                mc.in_channels,
                mc.out_channels
            )));
        }
        let (h, w) = set
            .extents()
            .ok_or_else(|| Error::Data(format!("{what} samples differ in size; resize them first")))?;
        self.model.check_input(Shape::new(1, mc.in_channels, h, w))
    }

    fn record_eval(&mut self, epoch: usize, split: Split, set: &SampleSet) -> Result<(f64, f64)> {
        let r = evaluate(&self.model, set, self.cfg.threshold, self.cfg.loss_smoothing)?;
        for (c, s) in r.per_class.iter().enumerate() {
            self.history.push(HistoryRow {
                epoch,
                split,
                class: c,
                loss: r.class_loss[c],
                dice: s.mean,
            });
        }
        Ok((r.class_loss.iter().sum(), r.mean_dice()))
    }

    fn consider_best(&mut self, dice: f64) -> bool {
        if self.best.is_some_and(|b| dice <= b.val_dice) {
            return false;
        }
        self.best = Some(BestInfo {
            epoch: self.epoch,
            val_dice: dice,
        });
        self.best_checkpoint = Some(Checkpoint::from_model(
            &self.model,
            Some(&self.cfg),
            self.epoch,
            &self.history,
            self.best,
            None,
        ));
        true
    }

    /// Scores the untrained model as epoch 0. Does nothing once history exists.
    pub fn evaluate_initial(&mut self, train: &SampleSet, val: Option<&SampleSet>) -> Result<Option<EpochSummary>> {
        if !self.history.rows.is_empty() {
            return Ok(None);
        }
        let t0 = Instant::now();
        let (train_loss, train_dice) = self.record_eval(0, Split::Train, train)?;
        let mut s = EpochSummary {
            epoch: 0,
            train_loss,
            train_dice,
            val_loss: None,
            val_dice: None,
            improved: false,
            seconds: 0.0,
        };
        let score = match val {
            Some(v) => {
                let (l, d) = self.record_eval(0, Split::Val, v)?;
                s.val_loss = Some(l);
                s.val_dice = Some(d);
                d
            }
            None => train_dice,
        };
        s.improved = self.consider_best(score);
        s.seconds = t0.elapsed().as_secs_f64();
        Ok(Some(s))
    }

    /// One pass over `train`, then validation.
    pub fn train_epoch(&mut self, train: &SampleSet, val: Option<&SampleSet>) -> Result<EpochSummary> {
        self.check_data(train, "training")?;
        if let Some(v) = val {
            self.check_data(v, "validation")?;
        }
        if self.cfg.batch_size > train.len() {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {} training samples",
                self.cfg.batch_size,
                train.len()
            )));
        }
        let t0 = Instant::now();
        let epoch = self.epoch + 1;
        let classes = train.classes();
        let eps = self.cfg.loss_smoothing;
        let mut loss_sum = vec![0.0; classes];
        let mut dice_sum = vec![0.0; classes];
        let mut images = 0usize;
        let mut tape = Tape::training();
        for (b, batch) in epoch_batches(train.len(), self.cfg.batch_size, self.cfg.seed, epoch)
            .into_iter()
            .enumerate()
        {
            let (x, y): (Tensor<f32>, Tensor<f32>) = train.batch(&batch)?;
            tape.reset();
            let xv = tape.input(x);
            let probs = self.model.forward(&mut tape, xv)?;
            let loss = tape.bi_dice_loss(probs, &y, eps)?;
            let lv = tape.value(loss).item()?;
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
            }
            let p = tape.value(probs);
            for n in 0..batch.len() {
                for c in 0..classes {
                    let (pp, tt) = (p.plane(n, c), y.plane(n, c));
                    loss_sum[c] += BiDiceTerms::compute(tt, pp, eps as f32).loss() as f64;
                    let pred: Vec<u8> = pp.iter().map(|&v| u8::from(v as f64 >= self.cfg.threshold)).collect();
                    let truth: Vec<u8> = tt.iter().map(|&v| v as u8).collect();
                    dice_sum[c] += dice_score(&truth, &pred)?;
                }
            }
            images += batch.len();
            tape.backward(loss)?;
            absorb_tape(&mut self.model, &tape)?;
            self.adam.step(&mut self.model)?;
        }
        self.epoch = epoch;
        for c in 0..classes {
            self.history.push(HistoryRow {
                epoch,
                split: Split::Train,
                class: c,
                loss: loss_sum[c] / images as f64,
                dice: dice_sum[c] / images as f64,
            });
        }
        let train_loss = loss_sum.iter().sum::<f64>() / images as f64;
        let train_dice = dice_sum.iter().sum::<f64>() / (images * classes) as f64;
        let (val_loss, val_dice) = match val {
            Some(v) => {
                let (l, d) = self.record_eval(epoch, Split::Val, v)?;
                (Some(l), Some(d))
            }
            None => (None, None),
        };
        let improved = self.consider_best(val_dice.unwrap_or(train_dice));
        Ok(EpochSummary {
            epoch,
            train_loss,
            train_dice,
            val_loss,
            val_dice,
            improved,
            seconds: t0.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `cfg.epochs`, writing `history.csv`, `best.sduc` and
    /// `last.sduc` under `out_dir` when given.
    pub fn fit(
        &mut self,
        train: &SampleSet,
        val: Option<&SampleSet>,
        out_dir: Option<&Path>,
        on_epoch: &mut dyn FnMut(&EpochSummary),
    ) -> Result<()> {
        self.check_data(train, "training")?;
        if let Some(d) = out_dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        if let Some(s) = self.evaluate_initial(train, val)? {
            on_epoch(&s);
            self.write_outputs(out_dir, s.improved, false)?;
        }
        while self.epoch < self.cfg.epochs {
            let s = self.train_epoch(train, val)?;
            on_epoch(&s);
            let every = self.cfg.checkpoint_every;
            let last = self.epoch == self.cfg.epochs || (every > 0 && self.epoch.is_multiple_of(every));
            self.write_outputs(out_dir, s.improved, last)?;
        }
        Ok(())
    }

    fn write_outputs(&self, out_dir: Option<&Path>, best: bool, last: bool) -> Result<()> {
        let Some(d) = out_dir else { return Ok(()) };
        self.history.write_csv(&d.join("history.csv"))?;
        if best {
            if let Some(ck) = &self.best_checkpoint {
                ck.save(&d.join("best.sduc"))?;
            }
        }
        if last {
            self.checkpoint().save(&d.join("last.sduc"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_partition_and_merge_singletons() {
        let b = epoch_batches(9, 4, 1, 1);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
        assert_eq!(epoch_batches(10, 4, 1, 1).len(), 3);
        assert_ne!(epoch_batches(10, 4, 1, 1), epoch_batches(10, 4, 1, 2));
        assert_eq!(epoch_batches(10, 4, 1, 2), epoch_batches(10, 4, 1, 2));
        assert_eq!(epoch_batches(1, 4, 0, 1), vec![vec![0]]);
    }
}
