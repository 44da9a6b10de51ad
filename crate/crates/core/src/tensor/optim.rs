use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Module, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// SGD or Adam state. Adam moments are keyed by parameter name and created
/// lazily with the parameter's shape on first update.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Shape of the first/second moment buffers for a parameter, if any exist yet.
    pub fn moment_len(&self, name: &str) -> Option<usize> {
        self.moments.get(name).map(|m| m.first.len())
    }

    /// Updates every trainable parameter of `module` that holds a gradient.
    pub fn step(&mut self, module: &mut dyn Module) -> Result<()> {
        self.step_count += 1;
        let mut res = Ok(());
        module.visit_mut(&mut |p| {
            if res.is_err() || !p.value.requires_grad {
                return;
            }
            if let Some(g) = p.value.grad.take() {
                res = self.update(&p.name, &mut p.value, &g);
                p.value.grad = Some(g);
            }
        });
        res
    }

    /// Updates explicit `(name, tensor)` pairs with matching gradients.
    pub fn step_tensors(&mut self, params: &mut [(&str, &mut Tensor)], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        for ((name, t), g) in params.iter_mut().zip(grads) {
            self.update(name, t, g)?;
        }
        Ok(())
    }

    fn update(&mut self, name: &str, t: &mut Tensor, g: &[f64]) -> Result<()> {
        if g.len() != t.numel() {
            return Err(Error::dim(format!(
                "gradient of length {} for parameter {name} of shape {:?}",
                g.len(),
                t.shape()
            )));
        }
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                t.data_mut().iter_mut().zip(g).for_each(|(w, gi)| *w -= lr * gi);
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
                let m = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                    first: vec![0.0; g.len()],
                    second: vec![0.0; g.len()],
                });
                let c1 = 1.0 - b1.powi(self.step_count as i32);
                let c2 = 1.0 - b2.powi(self.step_count as i32);
                for (i, w) in t.data_mut().iter_mut().enumerate() {
                    m.first[i] = b1 * m.first[i] + (1.0 - b1) * g[i];
                    m.second[i] = b2 * m.second[i] + (1.0 - b2) * g[i] * g[i];
                    let mhat = m.first[i] / c1;
                    let vhat = m.second[i] / c2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
