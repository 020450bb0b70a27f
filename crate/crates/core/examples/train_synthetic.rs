//! Trains on a generated dataset and reports held-out Dice per epoch.
//!
//! cargo run --release --example train_synthetic -- [sdu|unet] [epochs] [--speckle]

use sdu_seg::data::{synth_in_memory, SynthConfig};
use sdu_seg::models::{BlockKind, ModelConfig};
use sdu_seg::train::{TrainConfig, Trainer};

fn main() -> sdu_seg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let kind: BlockKind = args.first().map_or(Ok(BlockKind::Sdu), |a| a.parse())?;
    let epochs = args.get(1).and_then(|e| e.parse().ok()).unwrap_or(60);
    let speckle = args.iter().any(|a| a == "--speckle");

    let all = synth_in_memory(&SynthConfig::new(250, 64, 7).with_speckle(speckle))?;
    let ids = all.ids();
    let train = all.select(&ids[..200])?;
    let val = all.select(&ids[200..])?;

    let model = ModelConfig::new(kind).with_widths(&[16, 32, 64, 128]);
    let cfg = TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model, cfg)?;
    trainer.fit(&train, Some(&val), None, &mut |s| {
        println!(
            "epoch {:>3}  train loss {:.4} dice {:.4}  val dice {:.4}  {:.1}s{}",
            s.epoch,
            s.train_loss,
            s.train_dice,
            s.val_dice.unwrap_or(f64::NAN),
            s.seconds,
            if s.improved { "  *" } else { "" }
        );
    })?;
    let best = trainer.best().expect("at least one epoch");
    println!("best val dice {:.4} at epoch {}", best.val_dice, best.epoch);
    Ok(())
}
