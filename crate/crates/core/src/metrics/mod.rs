//! Segmentation losses, overlap scores and the statistics used to compare
//! two methods.

pub mod dice;
pub mod loss;
pub mod stats;

pub use dice::dice_score;
pub use loss::{bi_dice_loss, MaskPair, DEFAULT_SMOOTHING};
pub use stats::{paired_t_test, summarize, t_test_differences, ScoreSample, Summary, TTest};
