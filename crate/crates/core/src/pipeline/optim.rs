use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Rmsprop => "rmsprop",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Scalar hyperparameters of an optimizer; serialized into checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// RMSprop smoothing constant.
    pub decay: f64,
    pub eps: f64,
}

impl OptimizerSettings {
    pub fn adam(lr: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            decay: 0.99,
            eps: 1e-8,
        }
    }

    pub fn rmsprop(lr: f64) -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Rmsprop,
            ..Self::adam(lr)
        }
    }
}

/// Moment accumulators per trainable parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub settings: OptimizerSettings,
    pub step: u64,
    /// `(name, first moment, second moment)`; the first moment is empty for
    /// RMSprop.
    pub slots: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(settings: OptimizerSettings, params: &ParamStore) -> Result<OptimizerState> {
        if !(settings.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", settings.lr)));
        }
        let slots = params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| {
                let n = p.tensor.numel();
                let m = match settings.kind {
                    OptimizerKind::Adam => vec![0.0; n],
                    OptimizerKind::Rmsprop => Vec::new(),
                };
                (p.name.clone(), m, vec![0.0; n])
            })
            .collect();
        Ok(OptimizerState {
            settings,
            step: 0,
            slots,
        })
    }

    /// Applies one update from the gradients stored on `params`, replacing
    /// each trainable tensor with a fresh leaf.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        let grads = self
            .slots
            .iter()
            .map(|(name, _, _)| {
                let p = params
                    .param(name)
                    .ok_or_else(|| Error::Contract(format!("optimizer tracks unknown parameter {name}")))?;
                p.tensor
                    .grad()
                    .ok_or_else(|| Error::Contract(format!("parameter {name} has no gradient")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let s = self.settings;
        let t = self.step as f64;
        for ((name, m, v), g) in self.slots.iter_mut().zip(grads) {
            let mut x = params.get(name)?.to_vec();
            match s.kind {
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - s.beta1.powf(t);
                    let bc2 = 1.0 - s.beta2.powf(t);
                    for i in 0..x.len() {
                        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
                        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        x[i] -= s.lr * mhat / (vhat.sqrt() + s.eps);
                    }
                }
                OptimizerKind::Rmsprop => {
                    for i in 0..x.len() {
                        v[i] = s.decay * v[i] + (1.0 - s.decay) * g[i] * g[i];
                        x[i] -= s.lr * g[i] / (v[i].sqrt() + s.eps);
                    }
                }
            }
            params.set_data(name, x)?;
        }
        Ok(())
    }
}
