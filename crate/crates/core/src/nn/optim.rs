use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Adam with bias correction. Moments are keyed by parameter name so they
/// can be checkpointed and restored bit-exactly.
#[derive(Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `store` accepted by
    /// `trainable` that has a gradient in `grads`.
    pub fn step(
        &mut self,
        store: &ParamStore,
        grads: &GradStore,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in store.params() {
            if !trainable(name) {
                continue;
            }
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = &g.detach();
            let m = match self.first.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.second.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let m_hat = (&m / c1)?;
            let v_hat = (&v / c2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - (update * self.lr)?)?)?;
            self.first.insert(name.to_string(), m);
            self.second.insert(name.to_string(), v);
        }
        Ok(())
    }

    /// Moment tensors as `("m/<name>" | "v/<name>", tensor)` pairs.
    pub fn state_tensors(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (k, t) in &self.first {
            out.insert(format!("m/{k}"), t.clone());
        }
        for (k, t) in &self.second {
            out.insert(format!("v/{k}"), t.clone());
        }
        out
    }

    pub fn restore(&mut self, step: u64, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (k, t) in tensors {
            if let Some(name) = k.strip_prefix("m/") {
                first.insert(name.to_string(), t.clone());
            } else if let Some(name) = k.strip_prefix("v/") {
                second.insert(name.to_string(), t.clone());
            } else {
                return Err(Error::Checkpoint(format!("unexpected optimizer entry {k}")));
            }
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }
}
