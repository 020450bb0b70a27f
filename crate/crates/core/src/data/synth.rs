//! Synthetic ultrasound-like data: bright ellipses on a dark background,
//! optionally with multiplicative Rayleigh speckle.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::image::{write_image, Image};
use crate::data::{ChannelMode, Sample, SampleSet};
use crate::error::{Error, Result};
use crate::models::SPATIAL_MULTIPLE;

/// Foreground share kept by the generator.
pub const FOREGROUND_BOUNDS: (f64, f64) = (0.02, 0.40);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub speckle: bool,
}

impl SynthConfig {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        SynthConfig {
            n,
            height: size,
            width: size,
            seed,
            speckle: false,
        }
    }

    pub fn with_speckle(mut self, on: bool) -> Self {
        self.speckle = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("sample count must be >= 1".into()));
        }
        for (axis, v) in [("height", self.height), ("width", self.width)] {
            if v == 0 || v % SPATIAL_MULTIPLE != 0 {
                return Err(Error::Config(format!(
                    "{axis} {v} is not a positive multiple of {SPATIAL_MULTIPLE}"
                )));
            }
        }
        Ok(())
    }

    pub fn id(&self, index: usize) -> String {
        let digits = (self.n.saturating_sub(1)).to_string().len().max(4);
        format!("s{index:0digits$}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    /// Semi-axis along the rotated x direction.
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    /// Whether the center of pixel `(y, x)` lies inside.
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 + 0.5 - self.cy;
        let dx = x as f64 + 0.5 - self.cx;
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub image: Image,
    /// `{0, 1}` per pixel.
    pub mask: Vec<u8>,
    pub ellipses: Vec<Ellipse>,
    pub background: u8,
    pub foreground: u8,
}

fn rasterize(ellipses: &[Ellipse], h: usize, w: usize) -> Vec<u8> {
    let mut mask = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            mask[y * w + x] = u8::from(ellipses.iter().any(|e| e.contains(y, x)));
        }
    }
    mask
}

/// Deterministic in `(cfg.seed, index)`; independent of other samples.
pub fn synth_sample(cfg: &SynthConfig, index: usize) -> Result<SynthSample> {
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let m = h.min(w) as f64;
    let (lo, hi) = (m / 10.0, m / 3.0);
    let mut chosen = None;
    for _ in 0..1000 {
        let count = rng.random_range(1..=2);
        let mut ellipses = Vec::with_capacity(count);
        for _ in 0..count {
            let a = rng.random_range(lo..=hi);
            let b = rng.random_range(lo..=hi);
            let theta = rng.random_range(0.0..PI);
            // Axis-aligned half extents of the rotated ellipse keep it inside the frame.
            let (s, c) = theta.sin_cos();
            let ry = ((a * s).powi(2) + (b * c).powi(2)).sqrt();
            let rx = ((a * c).powi(2) + (b * s).powi(2)).sqrt();
            let cy = rng.random_range(ry..=(h as f64 - ry));
            let cx = rng.random_range(rx..=(w as f64 - rx));
            ellipses.push(Ellipse { cy, cx, a, b, theta });
        }
        let mask = rasterize(&ellipses, h, w);
        let frac = mask.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64;
        if (FOREGROUND_BOUNDS.0..=FOREGROUND_BOUNDS.1).contains(&frac) {
            chosen = Some((ellipses, mask));
            break;
        }
    }
    let (ellipses, mask) = chosen.ok_or_else(|| {
        Error::Config(format!("cannot place ellipses within the foreground bounds at {h}x{w}"))
    })?;
    let background: u8 = rng.random_range(20..=70);
    let foreground: u8 = rng.random_range(150..=220);
    let mut px: Vec<u8> = mask
        .iter()
        .map(|&m| if m == 1 { foreground } else { background })
        .collect();
    if cfg.speckle {
        // Rayleigh with unit mean, expressed as a shape-2 Weibull.
        let rayleigh = Weibull::new(2.0 / PI.sqrt(), 2.0).expect("valid parameters");
        for v in &mut px {
            let f: f64 = rayleigh.sample(&mut rng);
            *v = (*v as f64 * f).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(SynthSample {
        id: cfg.id(index),
        image: Image::gray8(w, h, px),
        mask,
        ellipses,
        background,
        foreground,
    })
}

/// Generates `cfg.n` samples under `root/images` and `root/masks` and
/// returns them as loaded.
pub fn synth_dataset(root: &Path, cfg: &SynthConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let (idir, mdir) = (root.join("images"), root.join("masks"));
    for d in [&idir, &mdir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let samples: Vec<Sample> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let s = synth_sample(cfg, i)?;
            write_image(&idir.join(format!("{}.pgm", s.id)), &s.image)?;
            let m = Image::gray8(cfg.width, cfg.height, s.mask.iter().map(|&v| v * 255).collect());
            write_image(&mdir.join(format!("{}.pgm", s.id)), &m)?;
            Ok(Sample {
                id: s.id,
                height: cfg.height,
                width: cfg.width,
                image: s.image.to_planar_unit(),
                masks: s.mask,
            })
        })
        .collect::<Result<_>>()?;
    SampleSet::new(ChannelMode::Gray, 1, samples)
}

/// In-memory variant of [`synth_dataset`].
pub fn synth_in_memory(cfg: &SynthConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let samples: Vec<Sample> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let s = synth_sample(cfg, i)?;
            Ok(Sample {
                id: s.id,
                height: cfg.height,
                width: cfg.width,
                image: s.image.to_planar_unit(),
                masks: s.mask,
            })
        })
        .collect::<Result<_>>()?;
    SampleSet::new(ChannelMode::Gray, 1, samples)
}
