use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::metrics::dice::dice_score;
use crate::metrics::loss::BiDiceTerms;
use crate::metrics::{summarize, Summary};
use crate::models::SegModel;
use crate::tensor::Tensor;

/// Anything that maps an image batch to per-class probabilities.
pub trait Segmenter: Sync {
    fn out_channels(&self) -> usize;

    fn probabilities(&self, images: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Segmenter for SegModel<f32> {
    fn out_channels(&self) -> usize {
        self.config().out_channels
    }

    fn probabilities(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.predict(images)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub class: usize,
    pub dice: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    /// Sorted by id, then class.
    pub per_image: Vec<ImageScore>,
    /// Dice mean and standard deviation over images, per class.
    pub per_class: Vec<Summary>,
    /// Mean bi-Dice loss over images, per class.
    pub class_loss: Vec<f64>,
    /// Predicted `{0, 1}` masks per sample, laid out like `Sample::masks`.
    #[serde(skip)]
    pub masks: Vec<Vec<u8>>,
}

impl EvalReport {
    /// Class-averaged mean Dice.
    pub fn mean_dice(&self) -> f64 {
        self.per_class.iter().map(|s| s.mean).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn dice_of(&self, class: usize) -> Vec<f64> {
        self.per_image
            .iter()
            .filter(|s| s.class == class)
            .map(|s| s.dice)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,class,dice,loss\n");
        for r in &self.per_image {
            s.push_str(&format!("{},{},{},{}\n", r.id, r.class, r.dice, r.loss));
        }
        s
    }
}

const EVAL_BATCH: usize = 8;

/// Per-image, per-class Dice of thresholded predictions.
pub fn evaluate(model: &dyn Segmenter, set: &SampleSet, threshold: f64, smoothing: f64) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Data("cannot evaluate an empty set".into()));
    }
    let classes = set.classes();
    if model.out_channels() != classes {
        return Err(Error::shape(
            "channel",
            format!("model predicts {} classes, data has {classes}", model.out_channels()),
        ));
    }
    let mut per_image = Vec::with_capacity(set.len() * classes);
    let mut masks = Vec::with_capacity(set.len());
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in chunk_by_extent(set, &indices, EVAL_BATCH) {
        let (x, _) = set.batch::<f32>(&chunk)?;
        let probs = model.probabilities(&x)?;
        for (n, &i) in chunk.iter().enumerate() {
            let s = &set.samples()[i];
            let mut pred_all = Vec::with_capacity(s.masks.len());
            for c in 0..classes {
                let p = probs.plane(n, c);
                let pred: Vec<u8> = p.iter().map(|&v| u8::from(v as f64 >= threshold)).collect();
                let truth = s.mask(c);
                let t64: Vec<f64> = truth.iter().map(|&v| v as f64).collect();
                let p64: Vec<f64> = p.iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect();
                let loss = BiDiceTerms::compute(&t64, &p64, smoothing).loss();
                per_image.push(ImageScore {
                    id: s.id.clone(),
                    class: c,
                    dice: dice_score(truth, &pred)?,
                    loss,
                });
                pred_all.extend(pred);
            }
            masks.push(pred_all);
        }
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut class_loss = Vec::with_capacity(classes);
    for c in 0..classes {
        let d: Vec<f64> = per_image.iter().filter(|s| s.class == c).map(|s| s.dice).collect();
        per_class.push(summarize(&d)?);
        let l: Vec<f64> = per_image.iter().filter(|s| s.class == c).map(|s| s.loss).collect();
        class_loss.push(l.iter().sum::<f64>() / l.len() as f64);
    }
    Ok(EvalReport {
        threshold,
        per_image,
        per_class,
        class_loss,
        masks,
    })
}

/// Splits `indices` into runs of at most `size` samples with equal extents,
/// preserving order.
pub(crate) fn chunk_by_extent(set: &SampleSet, indices: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &i in indices {
        let s = &set.samples()[i];
        let e = (s.height, s.width);
        match out.last_mut() {
            Some(last)
                if last.len() < size && {
                    let f = &set.samples()[last[0]];
                    (f.height, f.width) == e
                } =>
            {
                last.push(i)
            }
            _ => out.push(vec![i]),
        }
    }
    out
}
