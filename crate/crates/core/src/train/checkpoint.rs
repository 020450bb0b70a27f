//! Versioned binary checkpoints.
//!
//! ```text
//! "SDUC" | u32 LE version | u64 LE metadata length | metadata (JSON)
//! | f32 LE weights, every tensor in table order (buffers included)
//! | optional f32 LE Adam first moments, trainable tensors in table order
//! | optional f32 LE Adam second moments, same order
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelConfig, SegModel};
use crate::nn::{Layer, ParamRole};
use crate::tensor::Shape;
use crate::train::{Adam, AdamConfig, AdamMoments, BestInfo, History, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDUC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    /// Byte offset into the weight blob.
    pub offset: u64,
    pub role: ParamRole,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    /// Last completed epoch.
    pub epoch: usize,
    pub history: History,
    pub best: Option<BestInfo>,
    pub tensors: Vec<TensorEntry>,
    /// Present when the Adam moment blobs follow the weights.
    pub adam_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub weights: Vec<f32>,
    /// First and second moments of the trainable tensors, concatenated.
    pub adam: Option<(Vec<f32>, Vec<f32>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_model(
        model: &SegModel<f32>,
        train: Option<&TrainConfig>,
        epoch: usize,
        history: &History,
        best: Option<BestInfo>,
        adam: Option<&Adam<f32>>,
    ) -> Self {
        let mut tensors = Vec::new();
        let mut weights = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        model.visit("", &mut |name, p| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: p.shape().dims(),
                offset: (weights.len() * 4) as u64,
                role: p.role(),
            });
            weights.extend_from_slice(p.value().data());
            if let (Some(a), true) = (adam, p.role().trainable()) {
                match a.moments(name) {
                    Some(st) => {
                        m.extend_from_slice(&st.m);
                        v.extend_from_slice(&st.v);
                    }
                    None => {
                        m.extend(std::iter::repeat_n(0.0, p.numel()));
                        v.extend(std::iter::repeat_n(0.0, p.numel()));
                    }
                }
            }
        });
        Checkpoint {
            meta: CheckpointMeta {
                model: model.config().clone(),
                train: train.cloned(),
                epoch,
                history: history.clone(),
                best,
                tensors,
                adam_step: adam.map(|a| a.steps()),
            },
            weights,
            adam: adam.map(|_| (m, v)),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| bad(format!("metadata: {e}")))?;
        let extra = self.adam.as_ref().map_or(0, |(m, v)| m.len() + v.len());
        let mut out = Vec::with_capacity(16 + meta.len() + 4 * (self.weights.len() + extra));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let mut put = |xs: &[f32]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        put(&self.weights);
        if let Some((m, v)) = &self.adam {
            put(m);
            put(v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes.len() < 16 {
            return Err(bad("truncated header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let meta_end = 16usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..meta_end])
            .map_err(|e| bad(format!("metadata: {e}")))?;
        let mut expected_offset = 0u64;
        let mut numel = 0usize;
        let mut trainable = 0usize;
        for t in &meta.tensors {
            if t.offset != expected_offset {
                return Err(bad(format!("tensor {} at offset {}, expected {expected_offset}", t.name, t.offset)));
            }
            numel += t.numel();
            if t.role.trainable() {
                trainable += t.numel();
            }
            expected_offset = (numel * 4) as u64;
        }
        let floats = numel + meta.adam_step.map_or(0, |_| 2 * trainable);
        let body = &bytes[meta_end..];
        if body.len() != floats * 4 {
            return Err(bad(format!(
                "blob holds {} bytes, table requires {}",
                body.len(),
                floats * 4
            )));
        }
        let read = |range: std::ops::Range<usize>| -> Vec<f32> {
            body[range.start * 4..range.end * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        };
        let weights = read(0..numel);
        let adam = meta.adam_step.map(|_| {
            (
                read(numel..numel + trainable),
                read(numel + trainable..numel + 2 * trainable),
            )
        });
        Ok(Checkpoint { meta, weights, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Rebuilds the model and copies in every stored tensor.
    pub fn to_model(&self) -> Result<SegModel<f32>> {
        let mut model = SegModel::<f32>::new(self.meta.model.clone())?;
        let index: HashMap<&str, &TensorEntry> =
            self.meta.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut err = None;
        let mut used = 0;
        model.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match index.get(name) {
                None => err = Some(bad(format!("missing tensor {name}"))),
                Some(t) if Shape::from_dims(t.shape).ok() != Some(p.shape()) => {
                    err = Some(bad(format!(
                        "tensor {name} has shape {:?}, model expects {}",
                        t.shape,
                        p.shape()
                    )))
                }
                Some(t) => {
                    let start = t.offset as usize / 4;
                    p.value_mut()
                        .data_mut()
                        .copy_from_slice(&self.weights[start..start + t.numel()]);
                    used += 1;
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if used != self.meta.tensors.len() {
            return Err(bad("checkpoint holds tensors the model does not have"));
        }
        Ok(model)
    }

    /// Optimizer state, when stored.
    pub fn adam_state(&self, cfg: AdamConfig) -> Option<Adam<f32>> {
        let (m, v) = self.adam.as_ref()?;
        let mut moments = BTreeMap::new();
        let mut pos = 0;
        for t in self.meta.tensors.iter().filter(|t| t.role.trainable()) {
            let n = t.numel();
            moments.insert(
                t.name.clone(),
                AdamMoments {
                    m: m[pos..pos + n].to_vec(),
                    v: v[pos..pos + n].to_vec(),
                },
            );
            pos += n;
        }
        let mut adam = Adam::new(cfg);
        adam.restore(self.meta.adam_step.unwrap_or(0), moments);
        Some(adam)
    }
}
