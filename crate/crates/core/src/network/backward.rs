//! Actor-critic and supervised losses and their exact gradients.
//!
//! The minimised actor-critic objective per sample is
//! `value_weight * (R - V)^2 - A * log pi(a) - beta * H(pi)`, with the
//! advantage `A = R - V` held constant when differentiating the policy part.
//! Minimising the negated policy term is gradient ascent on the policy
//! objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::forward::{network_forward, ForwardTrace};
use super::params::{GradientSet, NetworkParams};
use super::Observation;

/// One training tuple: observation, action taken and its n-step return.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Observation,
    pub action: usize,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub value_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 1e-4,
            value_weight: 0.5,
        }
    }
}

/// Summed loss terms over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `value_weight * value + policy`
    pub total: f64,
    /// `sum (R - V)^2`
    pub value: f64,
    /// `-sum (A log pi(a) + beta H)`
    pub policy: f64,
    /// `sum H`
    pub entropy: f64,
}

fn check_batch(
    net: &NetworkParams,
    actions: impl Iterator<Item = usize>,
    cfg: Option<&LossConfig>,
) -> Result<()> {
    let n = net.num_actions();
    let mut count = 0;
    for a in actions {
        count += 1;
        if a >= n {
            return Err(Error::InvalidArgument(format!(
                "action index {a} out of range 0..{n}"
            )));
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(cfg) = cfg {
        if !(cfg.beta >= 0.0) {
            return Err(Error::InvalidArgument(
                "entropy coefficient must be >= 0".into(),
            ));
        }
    }
    Ok(())
}

/// Critic outputs for every sample, used as the detached baseline.
pub fn advantages(net: &NetworkParams, batch: &[Sample]) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|s| network_forward(net, &s.obs).map(|t| s.ret - t.value))
        .collect()
}

fn accumulate(
    out: &mut LossBreakdown,
    trace: &ForwardTrace,
    sample: &Sample,
    advantage: f64,
    cfg: &LossConfig,
) {
    let h = trace.entropy();
    let err = sample.ret - trace.value;
    out.value += err * err;
    out.policy -= trace.log_probs[sample.action] * advantage + cfg.beta * h;
    out.entropy += h;
}

/// Actor-critic loss with the advantage computed from the same network.
pub fn a3c_loss(net: &NetworkParams, batch: &[Sample], cfg: &LossConfig) -> Result<LossBreakdown> {
    check_batch(net, batch.iter().map(|s| s.action), Some(cfg))?;
    let mut out = LossBreakdown::default();
    for s in batch {
        let trace = network_forward(net, &s.obs)?;
        accumulate(&mut out, &trace, s, s.ret - trace.value, cfg);
    }
    out.total = cfg.value_weight * out.value + out.policy;
    Ok(out)
}

/// Same loss with externally supplied (frozen) advantages. Its plain
/// gradient equals the actor-critic gradient, which makes it the function
/// to finite-difference.
pub fn a3c_loss_fixed_advantage(
    net: &NetworkParams,
    batch: &[Sample],
    advantages: &[f64],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    check_batch(net, batch.iter().map(|s| s.action), Some(cfg))?;
    if advantages.len() != batch.len() {
        return Err(Error::InvalidArgument(
            "one advantage per sample required".into(),
        ));
    }
    let mut out = LossBreakdown::default();
    for (s, &a) in batch.iter().zip(advantages) {
        let trace = network_forward(net, &s.obs)?;
        accumulate(&mut out, &trace, s, a, cfg);
    }
    out.total = cfg.value_weight * out.value + out.policy;
    Ok(out)
}

/// Gradient of [`a3c_loss`] with the advantage detached.
pub fn backward(
    net: &NetworkParams,
    batch: &[Sample],
    cfg: &LossConfig,
) -> Result<(GradientSet, LossBreakdown)> {
    check_batch(net, batch.iter().map(|s| s.action), Some(cfg))?;
    let mut grads = GradientSet::zeros(&net.config());
    let mut out = LossBreakdown::default();
    let mut dlogits = vec![0.0; net.num_actions()];
    for s in batch {
        let trace = network_forward(net, &s.obs)?;
        let advantage = s.ret - trace.value;
        accumulate(&mut out, &trace, s, advantage, cfg);
        let h = trace.entropy();
        for (k, d) in dlogits.iter_mut().enumerate() {
            let p = trace.probs[k];
            let onehot = if k == s.action { 1.0 } else { 0.0 };
            *d = -advantage * (onehot - p) + cfg.beta * p * (trace.log_probs[k] + h);
        }
        let dvalue = -2.0 * cfg.value_weight * (s.ret - trace.value);
        backprop_sample(net, &trace, &dlogits, dvalue, &mut grads);
    }
    out.total = cfg.value_weight * out.value + out.policy;
    Ok((grads, out))
}

/// Supervised tuple: observation, expert action and value label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub obs: Observation,
    pub action: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SupervisedLoss {
    pub total: f64,
    /// `sum (V - label)^2`
    pub value: f64,
    /// `sum -log pi(expert)`
    pub cross_entropy: f64,
}

pub fn supervised_loss(
    net: &NetworkParams,
    batch: &[LabeledSample],
    value_weight: f64,
) -> Result<SupervisedLoss> {
    check_batch(net, batch.iter().map(|s| s.action), None)?;
    let mut out = SupervisedLoss::default();
    for s in batch {
        let t = network_forward(net, &s.obs)?;
        out.value += (t.value - s.value).powi(2);
        out.cross_entropy -= t.log_probs[s.action];
    }
    out.total = value_weight * out.value + out.cross_entropy;
    Ok(out)
}

/// Gradient of squared value error plus softmax cross-entropy.
pub fn supervised_backward(
    net: &NetworkParams,
    batch: &[LabeledSample],
    value_weight: f64,
) -> Result<(GradientSet, SupervisedLoss)> {
    check_batch(net, batch.iter().map(|s| s.action), None)?;
    let mut grads = GradientSet::zeros(&net.config());
    let mut out = SupervisedLoss::default();
    let mut dlogits = vec![0.0; net.num_actions()];
    for s in batch {
        let t = network_forward(net, &s.obs)?;
        out.value += (t.value - s.value).powi(2);
        out.cross_entropy -= t.log_probs[s.action];
        for (k, d) in dlogits.iter_mut().enumerate() {
            *d = t.probs[k] - if k == s.action { 1.0 } else { 0.0 };
        }
        let dvalue = 2.0 * value_weight * (t.value - s.value);
        backprop_sample(net, &t, &dlogits, dvalue, &mut grads);
    }
    out.total = value_weight * out.value + out.cross_entropy;
    Ok((grads, out))
}

/// Pushes head gradients back through the trunk and every LSTM step,
/// adding into `grads`.
pub fn backprop_sample(
    net: &NetworkParams,
    trace: &ForwardTrace,
    dlogits: &[f64],
    dvalue: f64,
    grads: &mut GradientSet,
) {
    let mlp = net.mlp();
    let g = &mut grads.mlp;
    let fc = trace.post2.len();

    g.w_policy.add_outer(dlogits, &trace.post2);
    for (b, d) in g.b_policy.iter_mut().zip(dlogits) {
        *b += d;
    }
    g.w_value.add_outer(&[dvalue], &trace.post2);
    g.b_value[0] += dvalue;

    let mut d2 = vec![0.0; fc];
    mlp.w_policy.add_transpose_mul(dlogits, &mut d2);
    mlp.w_value.add_transpose_mul(&[dvalue], &mut d2);
    for (d, pre) in d2.iter_mut().zip(&trace.pre2) {
        if *pre <= 0.0 {
            *d = 0.0;
        }
    }
    g.w2.add_outer(&d2, &trace.post1);
    for (b, d) in g.b2.iter_mut().zip(&d2) {
        *b += d;
    }

    let mut d1 = vec![0.0; fc];
    mlp.w2.add_transpose_mul(&d2, &mut d1);
    for (d, pre) in d1.iter_mut().zip(&trace.pre1) {
        if *pre <= 0.0 {
            *d = 0.0;
        }
    }
    g.w1.add_outer(&d1, &trace.encoded);
    for (b, d) in g.b1.iter_mut().zip(&d1) {
        *b += d;
    }

    let steps = &trace.lstm.steps;
    if steps.is_empty() {
        return;
    }
    let mut dencoded = vec![0.0; trace.encoded.len()];
    mlp.w1.add_transpose_mul(&d1, &mut dencoded);
    let self_dim = trace.encoded.len() - trace.lstm.hidden_size;
    backprop_lstm(net, &trace.lstm.steps, dencoded[self_dim..].to_vec(), grads);
}

fn backprop_lstm(
    net: &NetworkParams,
    steps: &[super::forward::LstmStep],
    mut dh: Vec<f64>,
    grads: &mut GradientSet,
) {
    let p = net.lstm();
    let g = &mut grads.lstm;
    let n = p.hidden();
    let mut dc = vec![0.0; n];
    let zeros = vec![0.0; n];
    let mut da_i = vec![0.0; n];
    let mut da_f = vec![0.0; n];
    let mut da_o = vec![0.0; n];
    let mut da_g = vec![0.0; n];
    for j in (0..steps.len()).rev() {
        let s = &steps[j];
        let c_prev = if j > 0 { &steps[j - 1].cell } else { &zeros };
        for k in 0..n {
            let (i, f, o, cand, tc) = (
                s.input_gate[k],
                s.forget_gate[k],
                s.output_gate[k],
                s.candidate[k],
                s.cell_tanh[k],
            );
            let d_cell = dc[k] + dh[k] * o * (1.0 - tc * tc);
            da_o[k] = dh[k] * tc * o * (1.0 - o);
            da_i[k] = d_cell * cand * i * (1.0 - i);
            da_f[k] = d_cell * c_prev[k] * f * (1.0 - f);
            da_g[k] = d_cell * i * (1.0 - cand * cand);
            dc[k] = d_cell * f;
        }
        g.w_input.add_outer(&da_i, &s.input);
        g.w_forget.add_outer(&da_f, &s.input);
        g.w_output.add_outer(&da_o, &s.input);
        g.w_cell.add_outer(&da_g, &s.input);
        for k in 0..n {
            g.b_input[k] += da_i[k];
            g.b_forget[k] += da_f[k];
            g.b_output[k] += da_o[k];
            g.b_cell[k] += da_g[k];
        }
        if j == 0 {
            break;
        }
        let mut dinput = vec![0.0; s.input.len()];
        p.w_input.add_transpose_mul(&da_i, &mut dinput);
        p.w_forget.add_transpose_mul(&da_f, &mut dinput);
        p.w_output.add_transpose_mul(&da_o, &mut dinput);
        p.w_cell.add_transpose_mul(&da_g, &mut dinput);
        dh.copy_from_slice(&dinput[s.input.len() - n..]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::params::NetworkConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetworkConfig {
        NetworkConfig {
            hidden: 5,
            fc: 7,
            actions: 11,
        }
    }

    fn sample<R: Rng>(rng: &mut R, n: usize) -> Sample {
        Sample {
            obs: Observation {
                self_state: [rng.gen_range(0.0..6.0), 1.2, rng.gen_range(-1.0..1.0), 0.5],
                neighbors: (0..n)
                    .map(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0)))
                    .collect(),
            },
            action: rng.gen_range(0..11),
            ret: rng.gen_range(-0.5..1.0),
        }
    }

    #[test]
    fn perfect_critic_has_zero_value_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = NetworkParams::random(&small(), &mut rng);
        let mut batch: Vec<Sample> = (0..4).map(|k| sample(&mut rng, k)).collect();
        for s in &mut batch {
            s.ret = network_forward(&net, &s.obs).unwrap().value;
        }
        let loss = a3c_loss(
            &net,
            &batch,
            &LossConfig {
                beta: 0.0,
                value_weight: 0.5,
            },
        )
        .unwrap();
        assert_eq!(loss.value, 0.0);
        assert_eq!(loss.policy, 0.0);
    }

    #[test]
    fn uniform_policy_has_max_entropy() {
        let net = NetworkParams::zeros(&NetworkConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<Sample> = (0..3).map(|k| sample(&mut rng, k)).collect();
        let loss = a3c_loss(&net, &batch, &LossConfig::default()).unwrap();
        assert!((loss.entropy - 3.0 * 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_zero_beta_leaves_policy_head_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = NetworkParams::random(&small(), &mut rng);
        let mut s = sample(&mut rng, 2);
        s.ret = network_forward(&net, &s.obs).unwrap().value;
        let (g, loss) = backward(
            &net,
            &[s],
            &LossConfig {
                beta: 0.0,
                value_weight: 0.5,
            },
        )
        .unwrap();
        assert_eq!(loss.policy, 0.0);
        assert!(g.mlp.w_policy.data.iter().all(|&x| x == 0.0));
        assert!(g.mlp.b_policy.iter().all(|&x| x == 0.0));
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn duplicated_sample_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = NetworkParams::random(&small(), &mut rng);
        let s = sample(&mut rng, 3);
        let cfg = LossConfig::default();
        let (g1, _) = backward(&net, &[s.clone()], &cfg).unwrap();
        let (g2, _) = backward(&net, &[s.clone(), s], &cfg).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.data.iter().zip(b.data) {
                assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn rejects_bad_action_and_empty_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = NetworkParams::random(&small(), &mut rng);
        let mut s = sample(&mut rng, 1);
        s.action = 11;
        assert!(matches!(
            a3c_loss(&net, &[s], &LossConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(backward(&net, &[], &LossConfig::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_on_tiny_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = NetworkParams::random(&small(), &mut rng);
        let batch: Vec<Sample> = [0, 1, 3].iter().map(|&k| sample(&mut rng, k)).collect();
        let cfg = LossConfig {
            beta: 0.05,
            value_weight: 0.5,
        };
        let adv = advantages(&net, &batch).unwrap();
        let (grads, _) = backward(&net, &batch, &cfg).unwrap();
        let eps = 1e-5;
        let analytic = grads.tensors();
        for (t, tensor) in analytic.iter().enumerate() {
            for idx in 0..tensor.data.len() {
                let mut plus = net.clone();
                plus.weights.tensors_mut()[t].1[idx] += eps;
                let mut minus = net.clone();
                minus.weights.tensors_mut()[t].1[idx] -= eps;
                let fp = a3c_loss_fixed_advantage(&plus, &batch, &adv, &cfg)
                    .unwrap()
                    .total;
                let fm = a3c_loss_fixed_advantage(&minus, &batch, &adv, &cfg)
                    .unwrap()
                    .total;
                let numeric = (fp - fm) / (2.0 * eps);
                let a = tensor.data[idx];
                let tol = 1e-8f64.max(1e-4 * a.abs().max(numeric.abs()));
                assert!(
                    (a - numeric).abs() <= tol,
                    "{} [{idx}]: {a} vs {numeric}",
                    tensor.name
                );
            }
        }
    }

    #[test]
    fn supervised_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = NetworkParams::random(&small(), &mut rng);
        let batch: Vec<LabeledSample> = (0..3)
            .map(|k| {
                let s = sample(&mut rng, k);
                LabeledSample {
                    obs: s.obs,
                    action: s.action,
                    value: 0.9,
                }
            })
            .collect();
        let (grads, _) = supervised_backward(&net, &batch, 0.5).unwrap();
        let eps = 1e-5;
        for (t, tensor) in grads.tensors().iter().enumerate() {
            for idx in (0..tensor.data.len()).step_by(3) {
                let mut plus = net.clone();
                plus.weights.tensors_mut()[t].1[idx] += eps;
                let mut minus = net.clone();
                minus.weights.tensors_mut()[t].1[idx] -= eps;
                let numeric = (supervised_loss(&plus, &batch, 0.5).unwrap().total
                    - supervised_loss(&minus, &batch, 0.5).unwrap().total)
                    / (2.0 * eps);
                let a = tensor.data[idx];
                assert!((a - numeric).abs() <= 1e-8f64.max(1e-4 * a.abs().max(numeric.abs())));
            }
        }
    }
}
