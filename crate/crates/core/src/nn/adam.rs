//! Adam over named parameter blocks.

use super::ParamBlock;
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all blocks that carry gradients. State is keyed by
    /// block name, so the block list may be rebuilt between calls.
    pub fn step(&mut self, blocks: &mut [ParamBlock<'_>]) {
        self.t += 1;
        let t = self.t as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for block in blocks.iter_mut() {
            let Some(grads) = block.grads.as_deref() else {
                continue;
            };
            let m = self
                .m
                .entry(block.name.clone())
                .or_insert_with(|| vec![0.0; block.values.len()]);
            let v = self
                .v
                .entry(block.name.clone())
                .or_insert_with(|| vec![0.0; block.values.len()]);
            assert_eq!(m.len(), block.values.len(), "block {} resized", block.name);
            for i in 0..block.values.len() {
                let g = grads[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                block.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Clears accumulated gradients before a fresh backward pass.
pub fn zero_grads(blocks: &mut [ParamBlock<'_>]) {
    for block in blocks.iter_mut() {
        if let Some(grads) = block.grads.as_deref_mut() {
            grads.fill(0.0);
        }
    }
}
