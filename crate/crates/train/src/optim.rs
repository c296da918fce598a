//! Adam and RMSProp over named parameter tensors.

use std::collections::BTreeMap;

use dmlbench_core::Params;
use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// RMSProp moving-average coefficient.
    pub gamma: f64,
    /// RMSProp per-step multiplicative learning-rate decay.
    pub decay: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            gamma: 0.9,
            decay: 1.0,
            weight_decay: 0.0,
        }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::Rmsprop, decay: 0.999, ..Self::adam(learning_rate) }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::config("learning_rate must be finite and non-negative"));
        }
        if !unit(self.beta1) || !unit(self.beta2) || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TrainError::config("beta1, beta2 must lie in [0, 1) and gamma in (0, 1)"));
        }
        if !(self.epsilon > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) || !(self.weight_decay >= 0.0) {
            return Err(TrainError::config("epsilon > 0, decay in (0, 1] and weight_decay >= 0 required"));
        }
        Ok(())
    }
}

/// Per-parameter first and second moments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub steps: u64,
    pub first: BTreeMap<String, ArrayD<f64>>,
    pub second: BTreeMap<String, ArrayD<f64>>,
}

impl OptimizerState {
    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, cfg: &OptimizerConfig, params: &mut Params<f64>, grads: &Params<f64>) -> Result<()> {
        self.steps += 1;
        let t = self.steps as f64;
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| TrainError::config(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(TrainError::config(format!("gradient shape mismatch for {name}")));
            }
            let zeros = || ArrayD::zeros(p.raw_dim());
            let v = self.second.entry(name.clone()).or_insert_with(zeros);
            match cfg.kind {
                OptimizerKind::Adam => {
                    let m = self.first.entry(name.clone()).or_insert_with(zeros);
                    let (c1, c2) = (1.0 - cfg.beta1.powf(t), 1.0 - cfg.beta2.powf(t));
                    Zip::from(&mut *p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        let g = g + cfg.weight_decay * *p;
                        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                        *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
                    });
                }
                OptimizerKind::Rmsprop => {
                    let lr = cfg.learning_rate * cfg.decay.powf(t - 1.0);
                    Zip::from(&mut *p).and(g).and(v).for_each(|p, &g, v| {
                        let g = g + cfg.weight_decay * *p;
                        *v = cfg.gamma * *v + (1.0 - cfg.gamma) * g * g;
                        *p -= lr * g / (v.sqrt() + cfg.epsilon);
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn one(v: f64) -> Params<f64> {
        let mut p = Params::new();
        p.insert("w".into(), arr1(&[v]).into_dyn());
        p
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = one(1.0);
        let mut s = OptimizerState::default();
        s.step(&OptimizerConfig::adam(0.1), &mut p, &one(3.0)).unwrap();
        assert!((p["w"][[0]] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        for cfg in [OptimizerConfig::adam(0.0), OptimizerConfig::rmsprop(0.0)] {
            let mut p = one(1.0);
            OptimizerState::default().step(&cfg, &mut p, &one(3.0)).unwrap();
            assert_eq!(p["w"][[0]], 1.0);
        }
    }

    #[test]
    fn rmsprop_minimizes_quadratic() {
        let mut p = one(2.0);
        let mut s = OptimizerState::default();
        for _ in 0..2000 {
            let g = one(2.0 * p["w"][[0]]);
            s.step(&OptimizerConfig::rmsprop(0.01), &mut p, &g).unwrap();
        }
        assert!(p["w"][[0]].abs() < 0.05);
    }
}
