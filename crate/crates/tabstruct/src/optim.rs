//! AdamW with decoupled weight decay and checkpointable moments, plus the
//! step-decay learning-rate schedule.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Epochs at which the rate is multiplied by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f64,
    /// Linear warm-up length in optimizer steps.
    pub warmup_steps: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            milestones: Vec::new(),
            decay: 0.1,
            warmup_steps: 0,
            grad_clip: Some(1.0),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config(
                "lr must be positive and betas in [0, 1)".into(),
            ));
        }
        if !(self.decay > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "decay must be positive, weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Rate for optimizer step `step` (0-based) taken during `epoch`.
    pub fn lr_at(&self, epoch: usize, step: u64) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| epoch >= m).count();
        let base = self.lr * self.decay.powi(drops as i32);
        if step < self.warmup_steps {
            base * (step + 1) as f64 / self.warmup_steps as f64
        } else {
            base
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: OptimConfig,
    /// Number of updates applied so far.
    pub t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Global L2 norm of the gradients present in `grads`.
    pub fn grad_norm(params: &ParamStore, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for var in params.vars().values() {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g
                    .to_dtype(DType::F64)?
                    .sqr()?
                    .sum_all()?
                    .to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// Applies one update at rate `lr`. Parameters without a gradient are
    /// left untouched. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<f64> {
        let c = &self.config;
        let norm = Self::grad_norm(params, grads)?;
        let scale = match c.grad_clip {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (name, var) in params.vars() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = (g * scale)?;
            let m = match self.m.get(name) {
                Some(m) => ((m * c.beta1)? + (&g * (1.0 - c.beta1))?)?,
                None => (&g * (1.0 - c.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?,
                None => (g.sqr()? * (1.0 - c.beta2))?,
            };
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + c.eps)?)?;
            let theta = var.as_tensor();
            let decayed = (theta * (1.0 - lr * c.weight_decay))?;
            var.set(&(decayed - (update * lr)?)?)?;
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(norm)
    }

    /// Moment tensors keyed `m.<param>` / `v.<param>`.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let m = self.m.iter().map(|(k, t)| (format!("m.{k}"), t.clone()));
        let v = self.v.iter().map(|(k, t)| (format!("v.{k}"), t.clone()));
        m.chain(v).collect()
    }

    pub fn load_state(&mut self, t: u64, tensors: impl IntoIterator<Item = (String, Tensor)>) {
        self.t = t;
        self.m.clear();
        self.v.clear();
        for (key, tensor) in tensors {
            if let Some(name) = key.strip_prefix("m.") {
                self.m.insert(name.to_string(), tensor);
            } else if let Some(name) = key.strip_prefix("v.") {
                self.v.insert(name.to_string(), tensor);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use candle_core::Device;

    #[test]
    fn step_decay_at_milestones() {
        let c = OptimConfig {
            lr: 1.0,
            milestones: vec![2, 4],
            ..OptimConfig::default()
        };
        assert_eq!(c.lr_at(0, 100), 1.0);
        assert!((c.lr_at(2, 100) - 0.1).abs() < 1e-12);
        assert!((c.lr_at(5, 100) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn warmup_is_linear() {
        let c = OptimConfig {
            lr: 1.0,
            warmup_steps: 4,
            ..OptimConfig::default()
        };
        assert_eq!(c.lr_at(0, 0), 0.25);
        assert_eq!(c.lr_at(0, 3), 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamStore::new(0, DType::F64, Device::Cpu);
        let x = ps.get("x", &[3], Init::Ones).unwrap();
        let mut opt = AdamW::new(OptimConfig {
            lr: 0.1,
            weight_decay: 0.0,
            grad_clip: None,
            ..OptimConfig::default()
        });
        for _ in 0..300 {
            let loss = (x.as_ref() - 3.0)
                .unwrap()
                .sqr()
                .unwrap()
                .sum_all()
                .unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&ps, &grads, 0.1).unwrap();
        }
        for v in x.to_vec1::<f64>().unwrap() {
            assert!((v - 3.0).abs() < 1e-2, "{v}");
        }
    }
}
