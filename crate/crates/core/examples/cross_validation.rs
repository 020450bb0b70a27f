//! Five-fold comparison of the two architectures on generated data.
//!
//! cargo run --release --example cross_validation -- [epochs]

use sdu_seg::data::{synth_in_memory, SynthConfig};
use sdu_seg::models::{BlockKind, ModelConfig};
use sdu_seg::train::{cross_validate, CrossValOptions, TTestOutcome, TrainConfig};

fn main() -> sdu_seg::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|e| e.parse().ok()).unwrap_or(3);
    let set = synth_in_memory(&SynthConfig::new(40, 32, 3))?;
    let a = ModelConfig::new(BlockKind::Sdu).with_widths(&[16, 32, 48, 64]);
    let b = a.clone().with_kind(BlockKind::DoubleConv);
    let train = TrainConfig {
        epochs,
        seed: 3,
        ..TrainConfig::default()
    };
    let report = cross_validate(&set, &a, Some(&b), &train, 0, &CrossValOptions::default(), &|arch, fold, s| {
        eprintln!("{arch} fold {fold} epoch {} loss {:.4}", s.epoch, s.train_loss);
    })?;
    for f in &report.folds {
        println!("{:<5} fold {}  dice {:.4} ± {:.4}  ({} val)", f.arch, f.fold, f.dice, f.std, f.n_val);
    }
    match report.ttest {
        Some(TTestOutcome::Test(t)) => println!("{t}"),
        Some(TTestOutcome::Degenerate(why)) => println!("degenerate: {why}"),
        None => {}
    }
    Ok(())
}
