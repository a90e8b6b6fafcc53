//! SGD and Adam over flat parameter slices.
//!
//! Each parameter group (embeddings, first-order weights, factors, ω) owns a
//! slot with its own moments and step counter, so a group that is only
//! updated in some passes keeps a correct bias correction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Slot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub slots: Vec<Slot>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, sizes: &[usize]) -> Self {
        let slots = sizes
            .iter()
            .map(|&n| match config.kind {
                OptimizerKind::Sgd => Slot::default(),
                OptimizerKind::Adam => Slot {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                    steps: 0,
                },
            })
            .collect();
        Self { config, slots }
    }

    /// Apply one descent step to `params` given `grads` for the group in `slot`.
    pub fn step(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        let c = self.config;
        let s = &mut self.slots[slot];
        s.steps += 1;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= c.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                let t = s.steps as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                let step = c.learning_rate / bc1;
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(s.m.iter_mut()).zip(s.v.iter_mut()) {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *p -= step * *m / ((*v / bc2).sqrt() + c.eps);
                }
            }
        }
    }
}
