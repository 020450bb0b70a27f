//! Lists the receptive-field extents reaching every level of a model.
//!
//! cargo run --example receptive_fields -- [sdu|unet]

use sdu_seg::models::{BlockKind, ModelConfig, SegModel};
use sdu_seg::nn::{receptive_field, SduBlock, SduBlockConfig};

fn main() -> sdu_seg::Result<()> {
    let kind: BlockKind = std::env::args().nth(1).map_or(Ok(BlockKind::Sdu), |a| a.parse())?;

    let block = SduBlock::<f32>::new(SduBlockConfig::new(64, 64))?;
    let rf = receptive_field(&block)?;
    println!("single block branches {:?}, output {}", rf.branches, rf.concat);

    let model = SegModel::<f32>::new(ModelConfig::new(kind))?;
    for level in model.receptive_fields()? {
        let (lo, hi) = (level.extents.first().unwrap_or(&0), level.extents.last().unwrap_or(&0));
        println!(
            "{:<12} jump {:>2}  {:>4} distinct extents in [{lo}, {hi}]",
            level.name,
            level.jump,
            level.extents.len()
        );
    }
    Ok(())
}
