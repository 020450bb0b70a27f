use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update<S: Scalar>(
    param: &mut [S],
    grad: &[S],
    moments: &mut AdamMoments<S>,
    t: u64,
    cfg: &AdamConfig,
) {
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let (c1, c2) = (S::one() - b1, S::one() - b2);
    let bc1 = S::lit(1.0 - cfg.beta1.powf(t as f64));
    let bc2 = S::lit(1.0 - cfg.beta2.powf(t as f64));
    let lr = S::lit(cfg.learning_rate);
    let eps = S::lit(cfg.eps);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *m = b1 * *m + c1 * g;
        *v = b2 * *v + c2 * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Adam over every trainable tensor of a layer, state keyed by parameter
/// name so registration order never matters.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    cfg: AdamConfig,
    step: u64,
    moments: BTreeMap<String, AdamMoments<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<&AdamMoments<S>> {
        self.moments.get(name)
    }

    pub fn restore(&mut self, step: u64, moments: BTreeMap<String, AdamMoments<S>>) {
        self.step = step;
        self.moments = moments;
    }

    /// Applies one update from the gradients stored on `layer`'s parameters
    /// and clears them. A missing gradient counts as zero. Nothing is
    /// modified when any gradient is non-finite.
    pub fn step(&mut self, layer: &mut dyn Layer<S>) -> Result<()> {
        let mut bad = None;
        layer.visit("", &mut |name, p| {
            if bad.is_none() && p.role().trainable() {
                if let Some(g) = p.value().grad() {
                    if g.iter().any(|v| !v.is_finite()) {
                        bad = Some(name.to_string());
                    }
                }
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        self.step += 1;
        let t = self.step;
        let cfg = self.cfg;
        let moments = &mut self.moments;
        layer.visit_mut("", &mut |name, p| {
            if !p.role().trainable() {
                return;
            }
            let n = p.numel();
            let st = moments.entry(name.to_string()).or_insert_with(|| AdamMoments {
                m: vec![S::zero(); n],
                v: vec![S::zero(); n],
            });
            let t_ref = p.value_mut();
            let grad = t_ref.take_grad().unwrap_or_else(|| vec![S::zero(); n]);
            adam_update(t_ref.data_mut(), &grad, st, t, &cfg);
        });
        Ok(())
    }
}
