use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::image::{read_image, supported_extension, write_image, Image};
use crate::data::{binarize, ChannelMode, Sample, SampleSet};
use crate::error::{Error, Result};

/// `(stem, path)` of every decodable file in `dir`, sorted by stem.
fn list(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !supported_extension(&ext) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("{}: non-UTF-8 file name", path.display())))?
            .to_string();
        out.push((stem, path));
    }
    out.sort();
    Ok(out)
}

/// Splits `id.c3` into `("id", Some(3))`.
fn class_suffix(stem: &str) -> (&str, Option<usize>) {
    if let Some((id, k)) = stem.rsplit_once(".c") {
        if !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(k) = k.parse() {
                return (id, Some(k));
            }
        }
    }
    (stem, None)
}

fn decode_mask(path: &Path, h: usize, w: usize) -> Result<Vec<u8>> {
    let img = read_image(path)?;
    if img.channels != 1 {
        return Err(Error::Data(format!("{}: masks must be single-channel", path.display())));
    }
    if (img.height, img.width) != (h, w) {
        return Err(Error::Data(format!(
            "{}: mask is {}x{} but its image is {h}x{w}",
            path.display(),
            img.height,
            img.width
        )));
    }
    Ok(binarize(&img.to_u8()).into_iter().map(|v| v / 255).collect())
}

/// Loads `<root>/images` and `<root>/masks`.
pub fn load_root(root: &Path) -> Result<SampleSet> {
    load_folder(&root.join("images"), &root.join("masks"))
}

/// Pairs images with masks by file stem and decodes them in parallel.
pub fn load_folder(images_dir: &Path, masks_dir: &Path) -> Result<SampleSet> {
    let images = list(images_dir)?;
    let mut masks: BTreeMap<String, BTreeMap<Option<usize>, PathBuf>> = BTreeMap::new();
    for (stem, path) in list(masks_dir)? {
        let (id, class) = class_suffix(&stem);
        if let Some(prev) = masks.entry(id.to_string()).or_default().insert(class, path.clone()) {
            return Err(Error::Data(format!(
                "masks {} and {} share a stem",
                prev.display(),
                path.display()
            )));
        }
    }
    if images.is_empty() {
        return Err(Error::Data(format!("{}: no images found", images_dir.display())));
    }
    let mut pairs = Vec::with_capacity(images.len());
    let mut classes = None;
    for w in images.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::Data(format!(
                "images {} and {} share the stem {}",
                w[0].1.display(),
                w[1].1.display(),
                w[0].0
            )));
        }
    }
    for (stem, path) in &images {
        let entry = masks.remove(stem).ok_or_else(|| {
            Error::Data(format!(
                "image {stem} has no mask in {}",
                masks_dir.display()
            ))
        })?;
        let paths: Vec<PathBuf> = if let Some(p) = entry.get(&None) {
            if entry.len() > 1 {
                return Err(Error::Data(format!(
                    "image {stem} has both a single mask and per-class masks"
                )));
            }
            vec![p.clone()]
        } else {
            let ks: Vec<usize> = entry.keys().map(|k| k.expect("class masks")).collect();
            if ks != (0..ks.len()).collect::<Vec<_>>() {
                return Err(Error::Data(format!(
                    "image {stem}: class masks {ks:?} are not numbered 0..{}",
                    ks.len()
                )));
            }
            entry.into_values().collect()
        };
        match classes {
            None => classes = Some(paths.len()),
            Some(c) if c != paths.len() => {
                return Err(Error::Data(format!(
                    "image {stem} has {} class masks, earlier images have {c}",
                    paths.len()
                )))
            }
            _ => {}
        }
        pairs.push((stem.clone(), path.clone(), paths));
    }
    if let Some(orphan) = masks.keys().next() {
        return Err(Error::Data(format!(
            "mask {orphan} has no image in {}",
            images_dir.display()
        )));
    }
    let decoded: Vec<(Sample, usize)> = pairs
        .par_iter()
        .map(|(id, img_path, mask_paths)| {
            let img = read_image(img_path)?;
            let mut masks = Vec::with_capacity(mask_paths.len() * img.width * img.height);
            for p in mask_paths {
                masks.extend(decode_mask(p, img.height, img.width)?);
            }
            Ok((
                Sample {
                    id: id.clone(),
                    height: img.height,
                    width: img.width,
                    image: img.to_planar_unit(),
                    masks,
                },
                img.channels,
            ))
        })
        .collect::<Result<_>>()?;
    let channels = decoded[0].1;
    if let Some((s, c)) = decoded.iter().find(|(_, c)| *c != channels) {
        return Err(Error::Data(format!(
            "image {} has {c} channels, others have {channels}",
            s.id
        )));
    }
    SampleSet::new(
        ChannelMode::from_channels(channels)?,
        classes.unwrap_or(1),
        decoded.into_iter().map(|(s, _)| s).collect(),
    )
}

/// Writes a set in the loader's layout as NetPBM. Images are quantized to 8 bits.
pub fn save_sample_set(set: &SampleSet, root: &Path) -> Result<()> {
    let (idir, mdir) = (root.join("images"), root.join("masks"));
    for d in [&idir, &mdir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let ext = if set.channels() == 3 { "ppm" } else { "pgm" };
    for s in set.samples() {
        let plane = s.plane();
        let c = set.channels();
        let mut px = vec![0u8; c * plane];
        for ch in 0..c {
            for i in 0..plane {
                px[i * c + ch] = (s.image[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        let img = if c == 3 {
            Image::rgb8(s.width, s.height, px)
        } else {
            Image::gray8(s.width, s.height, px)
        };
        write_image(&idir.join(format!("{}.{ext}", s.id)), &img)?;
        for k in 0..set.classes() {
            let name = if set.classes() == 1 {
                format!("{}.pgm", s.id)
            } else {
                format!("{}.c{k}.pgm", s.id)
            };
            let m = Image::gray8(s.width, s.height, s.mask(k).iter().map(|&v| v * 255).collect());
            write_image(&mdir.join(name), &m)?;
        }
    }
    Ok(())
}
