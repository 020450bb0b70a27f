//! Summarizes per-fold scores of two methods and runs a paired t-test.

use sdu_seg::metrics::{paired_t_test, summarize, ScoreSample};

fn main() -> sdu_seg::Result<()> {
    let sample = ScoreSample {
        a: vec![0.91, 0.89, 0.93, 0.90, 0.92],
        b: vec![0.88, 0.87, 0.90, 0.89, 0.88],
    };
    let (sa, sb) = (summarize(&sample.a)?, summarize(&sample.b)?);
    println!("a: {:.4} ± {:.4} (n = {})", sa.mean, sa.std, sa.n);
    println!("b: {:.4} ± {:.4} (n = {})", sb.mean, sb.std, sb.n);
    println!("{}", paired_t_test(&sample)?);

    let tied = ScoreSample { a: vec![0.5; 3], b: vec![0.4; 3] };
    match paired_t_test(&tied) {
        Ok(t) => println!("{t}"),
        Err(e) => println!("constant differences: {e}"),
    }
    Ok(())
}
