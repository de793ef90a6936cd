use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network, ParamGrad, Slot};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Mini-batch size W.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 10,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Momentum buffers, one per trainable layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    velocity: BTreeMap<Slot, ParamGrad>,
    steps: u64,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn velocity(&self, slot: Slot) -> Option<&ParamGrad> {
        self.velocity.get(&slot)
    }
}

/// One momentum step: `v = m v + g + wd p; p -= lr v`. Frozen layers are not
/// touched. A buffer whose layer changed size (a re-attached or extended
/// head) restarts from zero.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    config: &SgdConfig,
    state: &mut SgdState,
) -> Result<()> {
    let slots = net.trainable_slots();
    for &slot in &slots {
        let layer = net.layer(slot).expect("listed slot");
        let g = grads
            .get(slot)
            .ok_or_else(|| Error::Shape(format!("no gradient for trainable layer {slot:?}")))?;
        if g.weight.len() != layer.weight.len() || g.bias.len() != layer.bias.len() {
            return Err(Error::Shape(format!(
                "gradient for {slot:?} has {}+{} entries, layer has {}+{}",
                g.weight.len(),
                g.bias.len(),
                layer.weight.len(),
                layer.bias.len()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient in {slot:?} at step {}; training aborted",
                state.steps
            )));
        }
    }
    for slot in slots {
        let g = grads.get(slot).expect("checked");
        let layer = net.layer_mut(slot).expect("listed slot");
        let v = state.velocity.entry(slot).or_insert_with(|| ParamGrad {
            weight: Vec::new(),
            bias: Vec::new(),
        });
        if v.weight.len() != layer.weight.len() || v.bias.len() != layer.bias.len() {
            v.weight = vec![0.0; layer.weight.len()];
            v.bias = vec![0.0; layer.bias.len()];
        }
        let update = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = config.momentum * *v + g + config.weight_decay * *p;
                *p -= config.learning_rate * *v;
            }
        };
        update(&mut layer.weight, &mut v.weight, &g.weight);
        update(&mut layer.bias, &mut v.bias, &g.bias);
    }
    state.steps += 1;
    Ok(())
}
