//! Trains briefly, saves a checkpoint, reloads it and confirms that the
//! reloaded model predicts the same bits.

use sdu_seg::data::{synth_in_memory, SynthConfig};
use sdu_seg::models::{BlockKind, ModelConfig};
use sdu_seg::train::{Checkpoint, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = synth_in_memory(&SynthConfig::new(8, 32, 5))?;
    let model = ModelConfig::new(BlockKind::Sdu).with_widths(&[16, 32, 48, 64]);
    let cfg = TrainConfig {
        epochs: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model, cfg)?;
    trainer.fit(&set, None, None, &mut |s| println!("epoch {} loss {:.4}", s.epoch, s.train_loss))?;

    let path = std::env::temp_dir().join("sdu_seg_roundtrip.sduc");
    trainer.checkpoint().save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    println!("{} bytes, epoch {}", std::fs::metadata(&path)?.len(), loaded.meta.epoch);

    let (images, _) = set.batch::<f32>(&[0, 1])?;
    let before = trainer.model().predict(&images)?;
    let after = loaded.to_model()?.predict(&images)?;
    assert_eq!(before.data(), after.data());
    println!("reloaded predictions match");
    std::fs::remove_file(&path)?;
    Ok(())
}
