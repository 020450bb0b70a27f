//! Datasets on disk and in memory, fold plans, resizing and the synthetic
//! ultrasound-like generator.
//!
//! Layout: `<root>/images/<id>.(pgm|ppm|png)` and `<root>/masks/<id>.pgm`,
//! or one mask per class as `<root>/masks/<id>.c<k>.pgm`.

pub mod folds;
pub mod image;
pub mod loader;
pub mod resize;
pub mod synth;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub use folds::{make_folds, make_folds_for_ids, FoldPlan};
pub use image::{read_image, write_image, Image};
pub use loader::{load_folder, load_root, save_sample_set};
pub use resize::{resize_image, resize_mask};
pub use synth::{synth_dataset, synth_in_memory, synth_sample, Ellipse, SynthConfig, SynthSample};

/// 8-bit threshold separating foreground from background in mask files.
pub const MASK_THRESHOLD: u8 = 128;

/// Maps 8-bit mask values to `{0, 255}`.
pub fn binarize(mask: &[u8]) -> Vec<u8> {
    mask.iter()
        .map(|&v| if v >= MASK_THRESHOLD { 255 } else { 0 })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Gray,
    Rgb,
}

impl ChannelMode {
    pub fn channels(self) -> usize {
        match self {
            ChannelMode::Gray => 1,
            ChannelMode::Rgb => 3,
        }
    }

    pub fn from_channels(c: usize) -> Result<Self> {
        match c {
            1 => Ok(ChannelMode::Gray),
            3 => Ok(ChannelMode::Rgb),
            _ => Err(Error::Data(format!("unsupported channel count {c}"))),
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Gray => "gray",
            ChannelMode::Rgb => "rgb",
        })
    }
}

/// One decoded image with its masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// Planar channels scaled to `[0, 1]`.
    pub image: Vec<f32>,
    /// One `{0, 1}` plane per class.
    pub masks: Vec<u8>,
}

impl Sample {
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn mask(&self, class: usize) -> &[u8] {
        &self.masks[class * self.plane()..(class + 1) * self.plane()]
    }
}

/// Samples sorted by id, every one with the same channel and class count.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    channel_mode: ChannelMode,
    classes: usize,
    samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(channel_mode: ChannelMode, classes: usize, mut samples: Vec<Sample>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Data("a sample set needs at least one class".into()));
        }
        let c = channel_mode.channels();
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id {}", s.id)));
            }
            if s.height == 0 || s.width == 0 {
                return Err(Error::Data(format!("sample {} has zero extent", s.id)));
            }
            if s.image.len() != c * s.plane() {
                return Err(Error::Data(format!(
                    "sample {}: image has {} values, expected {} for {c}x{}x{}",
                    s.id,
                    s.image.len(),
                    c * s.plane(),
                    s.height,
                    s.width
                )));
            }
            if s.masks.len() != classes * s.plane() {
                return Err(Error::Data(format!(
                    "sample {}: mask extents differ from the image's {}x{}",
                    s.id, s.height, s.width
                )));
            }
            if s.masks.iter().any(|&m| m > 1) {
                return Err(Error::Data(format!("sample {}: mask values must be 0 or 1", s.id)));
            }
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(SampleSet {
            channel_mode,
            classes,
            samples,
        })
    }

    pub fn channel_mode(&self) -> ChannelMode {
        self.channel_mode
    }

    pub fn channels(&self) -> usize {
        self.channel_mode.channels()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.samples.binary_search_by(|s| s.id.as_str().cmp(id)).ok()
    }

    /// The named samples, in id order.
    pub fn select(&self, ids: &[String]) -> Result<SampleSet> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let i = self
                .index_of(id)
                .ok_or_else(|| Error::Data(format!("no sample with id {id}")))?;
            out.push(self.samples[i].clone());
        }
        SampleSet::new(self.channel_mode, self.classes, out)
    }

    /// Common spatial extents, or `None` when samples differ.
    pub fn extents(&self) -> Option<(usize, usize)> {
        let first = self.samples.first()?;
        let e = (first.height, first.width);
        self.samples
            .iter()
            .all(|s| (s.height, s.width) == e)
            .then_some(e)
    }

    /// Every sample resized to `h x w`: images bilinearly, masks by nearest neighbour.
    pub fn resized(&self, h: usize, w: usize) -> Result<SampleSet> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("resize target must be >= 1".into()));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                id: s.id.clone(),
                height: h,
                width: w,
                image: resize_image(&s.image, self.channels(), s.height, s.width, h, w),
                masks: resize_mask(&s.masks, self.classes, s.height, s.width, h, w),
            })
            .collect();
        SampleSet::new(self.channel_mode, self.classes, samples)
    }

    /// Stacks the indexed samples into image and mask tensors.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<S>, Tensor<S>)> {
        let first = indices
            .first()
            .map(|&i| &self.samples[i])
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (h, w) = (first.height, first.width);
        let mut img = Vec::with_capacity(indices.len() * self.channels() * h * w);
        let mut msk = Vec::with_capacity(indices.len() * self.classes * h * w);
        for &i in indices {
            let s = &self.samples[i];
            if (s.height, s.width) != (h, w) {
                return Err(Error::shape(
                    "spatial",
                    format!("sample {} is {}x{}, batch is {h}x{w}", s.id, s.height, s.width),
                ));
            }
            img.extend(s.image.iter().map(|&v| S::lit(v as f64)));
            msk.extend(s.masks.iter().map(|&v| if v == 1 { S::one() } else { S::zero() }));
        }
        let n = indices.len();
        Ok((
            Tensor::from_vec(Shape::new(n, self.channels(), h, w), img)?,
            Tensor::from_vec(Shape::new(n, self.classes, h, w), msk)?,
        ))
    }

    /// SHA-256 over ids, extents, pixel values and masks.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}:{}", self.channel_mode, self.classes).as_bytes());
        for s in &self.samples {
            h.update(s.id.as_bytes());
            h.update([0]);
            h.update((s.height as u64).to_le_bytes());
            h.update((s.width as u64).to_le_bytes());
            for v in &s.image {
                h.update(v.to_le_bytes());
            }
            h.update(&s.masks);
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
