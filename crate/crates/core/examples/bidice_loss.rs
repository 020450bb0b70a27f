//! Evaluates the two-sided Dice loss on hand-made masks next to the hard
//! Dice score of binary masks.

use sdu_seg::metrics::{bi_dice_loss, dice_score, MaskPair, DEFAULT_SMOOTHING};

fn main() -> sdu_seg::Result<()> {
    let truth = vec![1.0, 1.0, 0.0, 0.0];
    let cases = [
        ("exact", vec![1.0, 1.0, 0.0, 0.0]),
        ("inverted", vec![0.0, 0.0, 1.0, 1.0]),
        ("uncertain", vec![0.5; 4]),
        ("half right", vec![1.0, 0.0, 0.0, 0.0]),
    ];
    for (name, pred) in cases {
        let pair = MaskPair::new(truth.clone(), pred)?;
        let loss = bi_dice_loss(&pair, DEFAULT_SMOOTHING)?;
        let sharp = bi_dice_loss(&pair, 1e-9)?;
        println!("{name:<10} loss {loss:.4} (nearly unsmoothed {sharp:.4})");
    }

    let t = [1u8, 1, 0, 0, 1];
    let p = [1u8, 0, 0, 1, 1];
    println!("hard dice {:.4}", dice_score(&t, &p)?);
    Ok(())
}
