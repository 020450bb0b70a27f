use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_folds, FoldPlan, SampleSet};
use crate::error::{Error, Result};
use crate::metrics::{paired_t_test, summarize, ScoreSample, Summary, TTest};
use crate::models::ModelConfig;
use crate::train::eval::{evaluate, EvalReport};
use crate::train::{EpochSummary, TrainConfig, Trainer};

/// What the paired t-test pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Mean held-out Dice per fold, `k` pairs.
    Fold,
    /// Dice of every held-out image, one pair per image and class.
    Image,
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fold" => Ok(Pairing::Fold),
            "image" => Ok(Pairing::Image),
            _ => Err(Error::Config(format!("pairing must be fold or image, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CrossValOptions {
    pub k: usize,
    /// Folds trained concurrently.
    pub jobs: usize,
    pub pairing: Pairing,
}

impl Default for CrossValOptions {
    fn default() -> Self {
        CrossValOptions {
            k: 5,
            jobs: 1,
            pairing: Pairing::Fold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub arch: String,
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Class-averaged mean held-out Dice.
    pub dice: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TTestOutcome {
    Test(TTest),
    /// The differences had zero variance.
    Degenerate(String),
}

impl fmt::Display for TTestOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TTestOutcome::Test(t) => write!(f, "{t}"),
            TTestOutcome::Degenerate(m) => write!(f, "degenerate: {m}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub plan: FoldPlan,
    pub archs: Vec<String>,
    /// Fold rows for the first configuration, then the second.
    pub folds: Vec<FoldScore>,
    /// Summary of per-fold Dice, one per configuration.
    pub summaries: Vec<Summary>,
    pub pairing: Pairing,
    pub ttest: Option<TTestOutcome>,
    /// Held-out evaluations by configuration, then fold.
    #[serde(skip)]
    pub evaluations: Vec<Vec<EvalReport>>,
}

impl CrossValReport {
    pub fn folds_csv(&self) -> String {
        let mut s = String::from("arch,fold,n_train,n_val,dice,std\n");
        for r in &self.folds {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.arch, r.fold, r.n_train, r.n_val, r.dice, r.std
            ));
        }
        s
    }
}

impl fmt::Display for CrossValReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>4} {:>7} {:>5} {:>10}", "arch", "fold", "n_train", "n_val", "dice")?;
        for r in &self.folds {
            writeln!(
                f,
                "{:<8} {:>4} {:>7} {:>5} {:>10.6}",
                r.arch, r.fold, r.n_train, r.n_val, r.dice
            )?;
        }
        for (a, s) in self.archs.iter().zip(&self.summaries) {
            writeln!(f, "{a}: {s} over {} folds", s.n)?;
        }
        if let Some(t) = &self.ttest {
            writeln!(f, "paired t-test ({} pairing): {t}", match self.pairing {
                Pairing::Fold => "fold",
                Pairing::Image => "image",
            })?;
        }
        Ok(())
    }
}

fn run_fold(
    set: &SampleSet,
    plan: &FoldPlan,
    fold: usize,
    model: &ModelConfig,
    train: &TrainConfig,
    log: &(dyn Fn(&str, usize, &EpochSummary) + Sync),
) -> Result<(FoldScore, EvalReport)> {
    let tr = set.select(&plan.training_ids(fold))?;
    let va = set.select(&plan.validation_ids(fold))?;
    let cfg = TrainConfig {
        seed: train.seed.wrapping_add(fold as u64),
        ..train.clone()
    };
    let arch = model.block_kind.arch_name();
    let mut trainer = Trainer::new(model, cfg)?;
    trainer.fit(&tr, Some(&va), None, &mut |s| log(arch, fold, s))?;
    let r = evaluate(trainer.model(), &va, train.threshold, train.loss_smoothing)?;
    let dice: Vec<f64> = r.per_image.iter().map(|s| s.dice).collect();
    let summary = summarize(&dice)?;
    Ok((
        FoldScore {
            arch: arch.to_string(),
            fold,
            n_train: tr.len(),
            n_val: va.len(),
            dice: r.mean_dice(),
            std: summary.std,
        },
        r,
    ))
}

/// Trains one model per fold complement and scores the final weights on the
/// held-out fold. With a second configuration both run on identical folds
/// and seeds, and their scores are compared with a paired t-test.
pub fn cross_validate(
    set: &SampleSet,
    model_a: &ModelConfig,
    model_b: Option<&ModelConfig>,
    train: &TrainConfig,
    seed: u64,
    opts: &CrossValOptions,
    log: &(dyn Fn(&str, usize, &EpochSummary) + Sync),
) -> Result<CrossValReport> {
    train.validate()?;
    let plan = make_folds(set, opts.k, seed)?;
    let configs: Vec<&ModelConfig> = std::iter::once(model_a).chain(model_b).collect();
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..opts.k).map(move |f| (c, f)))
        .collect();
    let run = |&(c, f): &(usize, usize)| run_fold(set, &plan, f, configs[c], train, log);
    let results: Vec<(FoldScore, EvalReport)> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        jobs.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    let mut folds = Vec::new();
    let mut evaluations = vec![Vec::new(); configs.len()];
    for ((c, _), (score, eval)) in jobs.iter().zip(results) {
        folds.push(score);
        evaluations[*c].push(eval);
    }
    let summaries = (0..configs.len())
        .map(|c| {
            let d: Vec<f64> = folds[c * opts.k..(c + 1) * opts.k].iter().map(|f| f.dice).collect();
            summarize(&d)
        })
        .collect::<Result<Vec<_>>>()?;
    let ttest = (configs.len() == 2).then(|| {
        let sample = match opts.pairing {
            Pairing::Fold => ScoreSample {
                a: folds[..opts.k].iter().map(|f| f.dice).collect(),
                b: folds[opts.k..].iter().map(|f| f.dice).collect(),
            },
            Pairing::Image => {
                let flat = |c: usize| -> Vec<f64> {
                    evaluations[c]
                        .iter()
                        .flat_map(|r| r.per_image.iter().map(|s| s.dice))
                        .collect()
                };
                ScoreSample { a: flat(0), b: flat(1) }
            }
        };
        match paired_t_test(&sample) {
            Ok(t) => Ok(TTestOutcome::Test(t)),
            Err(Error::Degenerate(m)) => Ok(TTestOutcome::Degenerate(m)),
            Err(e) => Err(e),
        }
    });
    let ttest = ttest.transpose()?;
    Ok(CrossValReport {
        plan,
        archs: configs.iter().map(|c| c.block_kind.arch_name().to_string()).collect(),
        folds,
        summaries,
        pairing: opts.pairing,
        ttest,
        evaluations,
    })
}
