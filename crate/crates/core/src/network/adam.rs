use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{GradientSet, NetworkConfig, NetworkParams, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: ParamSet,
    v: ParamSet,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, shape: &NetworkConfig) -> Self {
        Adam {
            config,
            m: ParamSet::zeros(shape),
            v: ParamSet::zeros(shape),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Non-finite gradients are rejected before any
    /// state changes.
    pub fn step(&mut self, net: &mut NetworkParams, grads: &GradientSet) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NumericInput(
                "gradient contains non-finite values".into(),
            ));
        }
        if grads.config() != net.config() {
            return Err(Error::Configuration(
                "gradient shape does not match network".into(),
            ));
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let g_all = grads.tensors();
        let m_all = self.m.tensors_mut();
        let v_all = self.v.tensors_mut();
        let p_all = net.weights.tensors_mut();
        for (((g, (_, m)), (_, v)), (_, p)) in g_all.iter().zip(m_all).zip(v_all).zip(p_all) {
            for k in 0..p.len() {
                let gk = g.data[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            hidden: 3,
            fc: 4,
            actions: 11,
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut net = NetworkParams::random(&tiny(), &mut ChaCha8Rng::seed_from_u64(0));
        let before = net.clone();
        let mut adam = Adam::new(AdamConfig::default(), &tiny());
        adam.step(&mut net, &GradientSet::zeros(&tiny())).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g and v_hat = g^2 after bias correction, so the step is
        // lr * g / (|g| + eps).
        let mut net = NetworkParams::zeros(&tiny());
        let mut g = GradientSet::zeros(&tiny());
        g.fill(0.37);
        let cfg = AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &tiny());
        adam.step(&mut net, &g).unwrap();
        let expected = -1e-3 * 0.37 / (0.37 + 1e-8);
        for t in net.weights.tensors() {
            for x in t.data {
                assert!((x - expected).abs() < 1e-15, "{x}");
            }
        }
    }

    #[test]
    fn identical_histories_update_identically() {
        let mut net = NetworkParams::zeros(&tiny());
        let mut adam = Adam::new(AdamConfig::default(), &tiny());
        for k in 0..5 {
            let mut g = GradientSet::zeros(&tiny());
            g.mlp.b1[0] = 0.1 * k as f64 - 0.2;
            g.mlp.b1[1] = 0.1 * k as f64 - 0.2;
            adam.step(&mut net, &g).unwrap();
        }
        assert_eq!(net.weights.mlp.b1[0], net.weights.mlp.b1[1]);
        assert_ne!(net.weights.mlp.b1[0], 0.0);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut net = NetworkParams::zeros(&tiny());
        let before = net.clone();
        let mut g = GradientSet::zeros(&tiny());
        g.mlp.b2[0] = f64::INFINITY;
        let mut adam = Adam::new(AdamConfig::default(), &tiny());
        assert!(adam.step(&mut net, &g).is_err());
        assert_eq!(net, before);
        assert_eq!(adam.steps_taken(), 0);
    }
}
