//! SGDW, AdamW and RMSprop with decoupled weight decay.
//!
//! Update rules follow the usual Keras formulation. Optimizer state is kept
//! in `f64` regardless of the parameter precision.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "SGDW", alias = "sgdw")]
    Sgdw,
    #[serde(rename = "AdamW", alias = "adamw", alias = "Adamw")]
    AdamW,
    #[serde(rename = "RMSprop", alias = "rmsprop")]
    RmsProp,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgdw" => Ok(Self::Sgdw),
            "adamw" => Ok(Self::AdamW),
            "rmsprop" => Ok(Self::RmsProp),
            _ => Err(Error::Config(format!("unsupported optimizer {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// RMSprop accumulator decay.
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            learning_rate: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            rho: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl OptimizerConfig {
    /// RMSprop with learning rate 1e-4, momentum 0.9 and ρ = 0.7.
    pub fn siamese_default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::RmsProp,
            learning_rate: 1e-4,
            momentum: 0.9,
            rho: 0.7,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("optimizer {what} out of range: {v}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", self.learning_rate);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", self.momentum);
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", self.weight_decay);
        }
        for (name, v) in [("rho", self.rho), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(name, v);
            }
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", self.epsilon);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct Slot {
    /// SGDW velocity, Adam first moment or RMSprop momentum.
    a: Vec<f64>,
    /// Adam second moment or RMSprop accumulator.
    b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    config: OptimizerConfig,
    iterations: u64,
    slots: Vec<Slot>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            iterations: 0,
            slots: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Applies one update to every trainable parameter from its accumulated
    /// gradient. Nothing is modified if any gradient is non-finite.
    pub fn step<T: Real>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            if p.trainable && !p.grad.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        if self.slots.len() != store.len() {
            self.slots = store
                .iter()
                .map(|(_, p)| {
                    let n = if p.trainable { p.value.numel() } else { 0 };
                    Slot {
                        a: vec![0.0; n],
                        b: vec![0.0; n],
                    }
                })
                .collect();
        }
        self.iterations += 1;
        let c = self.config;
        let t = self.iterations as f64;
        let lr = c.learning_rate;
        let adam_lr = lr * (1.0 - c.beta2.powf(t)).sqrt() / (1.0 - c.beta1.powf(t));
        for ((_, p), slot) in store.iter_mut().zip(&mut self.slots) {
            if !p.trainable {
                continue;
            }
            if slot.a.len() != p.value.numel() {
                return Err(Error::shape("optimizer state", &[slot.a.len()], p.value.shape()));
            }
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (i, (w, g)) in values.iter_mut().zip(grads).enumerate() {
                let g = g.as_f64();
                let mut x = w.as_f64();
                x -= lr * c.weight_decay * x;
                match c.kind {
                    OptimizerKind::Sgdw => {
                        if c.momentum > 0.0 {
                            slot.a[i] = c.momentum * slot.a[i] - lr * g;
                            x += slot.a[i];
                        } else {
                            x -= lr * g;
                        }
                    }
                    OptimizerKind::AdamW => {
                        slot.a[i] += (1.0 - c.beta1) * (g - slot.a[i]);
                        slot.b[i] += (1.0 - c.beta2) * (g * g - slot.b[i]);
                        x -= adam_lr * slot.a[i] / (slot.b[i].sqrt() + c.epsilon);
                    }
                    OptimizerKind::RmsProp => {
                        slot.b[i] = c.rho * slot.b[i] + (1.0 - c.rho) * g * g;
                        let inc = lr * g / (slot.b[i] + c.epsilon).sqrt();
                        if c.momentum > 0.0 {
                            slot.a[i] = c.momentum * slot.a[i] + inc;
                            x -= slot.a[i];
                        } else {
                            x -= inc;
                        }
                    }
                }
                *w = T::lit(x);
            }
        }
        Ok(())
    }
}
