use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Smoothing term used unless configured otherwise.
pub const DEFAULT_SMOOTHING: f64 = 1.0;

/// Ground truth and predicted probabilities for one mask plane.
#[derive(Clone, Debug)]
pub struct MaskPair {
    truth: Vec<f64>,
    pred: Vec<f64>,
}

impl MaskPair {
    /// `truth` must be exactly 0 or 1 everywhere; `pred` is clamped to `[0, 1]`.
    pub fn new(truth: Vec<f64>, pred: Vec<f64>) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape(
                "plane",
                format!("truth has {} pixels, prediction {}", truth.len(), pred.len()),
            ));
        }
        if truth.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("ground-truth mask must be binary".into()));
        }
        let pred = pred.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(MaskPair { truth, pred })
    }

    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn pred(&self) -> &[f64] {
        &self.pred
    }

    /// The pair with foreground and background exchanged.
    pub fn complement(&self) -> Self {
        MaskPair {
            truth: self.truth.iter().map(|v| 1.0 - v).collect(),
            pred: self.pred.iter().map(|v| 1.0 - v).collect(),
        }
    }
}

/// Bi-Dice loss of one plane, in `[0, 2)`.
pub fn bi_dice_loss(pair: &MaskPair, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing must be positive, got {eps}")));
    }
    Ok(BiDiceTerms::compute(&pair.truth, &pair.pred, eps).loss())
}

/// Reduced sums of one plane, enough to evaluate the loss and its gradient.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BiDiceTerms<S> {
    fg_num: S,
    fg_den: S,
    bg_num: S,
    bg_den: S,
}

impl<S: Scalar> BiDiceTerms<S> {
    pub fn compute(truth: &[S], pred: &[S], eps: S) -> Self {
        let one = S::one();
        let two = S::lit(2.0);
        let (mut inter, mut sp, mut sq) = (S::zero(), S::zero(), S::zero());
        let (mut inter_bg, mut sp_bg, mut sq_bg) = (S::zero(), S::zero(), S::zero());
        for (&p, &q) in truth.iter().zip(pred) {
            let q = q.max(S::zero()).min(one);
            inter += p * q;
            sp += p;
            sq += q;
            inter_bg += (one - p) * (one - q);
            sp_bg += one - p;
            sq_bg += one - q;
        }
        BiDiceTerms {
            fg_num: two * inter + eps,
            fg_den: sp + sq + eps,
            bg_num: two * inter_bg + eps,
            bg_den: sp_bg + sq_bg + eps,
        }
    }

    pub fn loss(&self) -> S {
        S::lit(2.0) - self.fg_num / self.fg_den - self.bg_num / self.bg_den
    }

    /// d(loss)/d(pred) at a pixel whose ground truth is `p`.
    pub fn grad(&self, p: S) -> S {
        let two = S::lit(2.0);
        let d_fg = (two * p * self.fg_den - self.fg_num) / (self.fg_den * self.fg_den);
        let d_bg = (self.bg_num - two * (S::one() - p) * self.bg_den) / (self.bg_den * self.bg_den);
        -d_fg - d_bg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the loss formula, term by term.
    fn formula(p: &[f64], q: &[f64], eps: f64) -> f64 {
        let s = |f: &dyn Fn(usize) -> f64| (0..p.len()).map(f).sum::<f64>();
        let fg = (2.0 * s(&|i| p[i] * q[i]) + eps) / (s(&|i| p[i]) + s(&|i| q[i]) + eps);
        let bg = (2.0 * s(&|i| (1.0 - p[i]) * (1.0 - q[i])) + eps)
            / (s(&|i| 1.0 - p[i]) + s(&|i| 1.0 - q[i]) + eps);
        2.0 - fg - bg
    }

    #[test]
    fn perfect_prediction_is_zero() {
        for eps in [1e-3, 1.0, 10.0] {
            let pair = MaskPair::new(vec![1., 0., 1., 1.], vec![1., 0., 1., 1.]).unwrap();
            assert_eq!(bi_dice_loss(&pair, eps).unwrap(), 0.0);
        }
    }

    #[test]
    fn inverted_prediction() {
        let p = [1., 1., 0., 0.];
        let q = [0., 0., 1., 1.];
        let pair = MaskPair::new(p.to_vec(), q.to_vec()).unwrap();
        let l = bi_dice_loss(&pair, 1.0).unwrap();
        assert!((formula(&p, &q, 1.0) - 1.6).abs() < 1e-12);
        assert!((l - 1.6).abs() < 1e-12);
    }

    #[test]
    fn uniform_half_prediction() {
        let p = [1., 1., 0., 0.];
        let q = [0.5; 4];
        let pair = MaskPair::new(p.to_vec(), q.to_vec()).unwrap();
        assert!((formula(&p, &q, 1.0) - 0.8).abs() < 1e-12);
        assert!((bi_dice_loss(&pair, 1.0).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(MaskPair::new(vec![0.5], vec![0.5]).is_err());
        assert!(MaskPair::new(vec![1.0], vec![0.5, 0.5]).is_err());
        let pair = MaskPair::new(vec![1.0], vec![2.0]).unwrap();
        assert_eq!(pair.pred(), &[1.0]);
        assert!(bi_dice_loss(&pair, 0.0).is_err());
    }
}
