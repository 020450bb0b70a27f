use crate::error::{Error, Result};

/// `2|A∩B| / (|A| + |B|)` over two binary masks (nonzero = foreground).
/// Two empty masks score 1.
pub fn dice_score(truth: &[u8], predicted: &[u8]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::shape(
            "plane",
            format!("masks of {} and {} pixels", truth.len(), predicted.len()),
        ));
    }
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(predicted) {
        let (t, p) = (t != 0, p != 0);
        a += t as usize;
        b += p as usize;
        both += (t && p) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}
