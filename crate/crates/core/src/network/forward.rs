use crate::agent::NEIGHBOR_DIM;
use crate::error::{Error, Result};

use super::params::{LstmParams, NetworkParams};
use super::Observation;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything one LSTM cell computed for one neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    /// `[neighbor ; h_prev]`
    pub input: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub cell: Vec<f64>,
    pub cell_tanh: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl LstmStep {
    pub fn prev_hidden(&self) -> &[f64] {
        &self.input[NEIGHBOR_DIM..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    pub hidden_size: usize,
    pub steps: Vec<LstmStep>,
}

impl LstmTrace {
    /// `h_n`, or zeros for an empty sequence.
    pub fn final_hidden(&self) -> Vec<f64> {
        self.steps
            .last()
            .map(|s| s.hidden.clone())
            .unwrap_or_else(|| vec![0.0; self.hidden_size])
    }
}

/// One LSTM cell update.
pub fn lstm_step(params: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
    let n = params.hidden();
    let mut input = Vec::with_capacity(NEIGHBOR_DIM + n);
    input.extend_from_slice(x);
    input.extend_from_slice(h_prev);

    let mut i = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut o = vec![0.0; n];
    let mut g = vec![0.0; n];
    params.w_input.affine_into(&input, &params.b_input, &mut i);
    params
        .w_forget
        .affine_into(&input, &params.b_forget, &mut f);
    params
        .w_output
        .affine_into(&input, &params.b_output, &mut o);
    params.w_cell.affine_into(&input, &params.b_cell, &mut g);

    let mut cell = vec![0.0; n];
    let mut cell_tanh = vec![0.0; n];
    let mut hidden = vec![0.0; n];
    for k in 0..n {
        i[k] = sigmoid(i[k]);
        f[k] = sigmoid(f[k]);
        o[k] = sigmoid(o[k]);
        g[k] = g[k].tanh();
        cell[k] = f[k] * c_prev[k] + i[k] * g[k];
        cell_tanh[k] = cell[k].tanh();
        hidden[k] = o[k] * cell_tanh[k];
    }
    LstmStep {
        input,
        input_gate: i,
        forget_gate: f,
        output_gate: o,
        candidate: g,
        cell,
        cell_tanh,
        hidden,
    }
}

/// Runs the neighbor sequence through the LSTM from zero hidden and cell
/// state and returns the final hidden state with the full trace.
pub fn lstm_encode(
    params: &LstmParams,
    sequence: &[[f64; NEIGHBOR_DIM]],
) -> Result<(Vec<f64>, LstmTrace)> {
    if sequence.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NumericInput(
            "neighbor observation is not finite".into(),
        ));
    }
    let n = params.hidden();
    let mut steps: Vec<LstmStep> = Vec::with_capacity(sequence.len());
    let zeros = vec![0.0; n];
    for x in sequence {
        let step = match steps.last() {
            Some(prev) => lstm_step(params, x, &prev.hidden, &prev.cell),
            None => lstm_step(params, x, &zeros, &zeros),
        };
        steps.push(step);
    }
    let trace = LstmTrace {
        hidden_size: n,
        steps,
    };
    Ok((trace.final_hidden(), trace))
}

/// Intermediate values of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub lstm: LstmTrace,
    /// `s_e = [self ; h_n]`
    pub encoded: Vec<f64>,
    pub pre1: Vec<f64>,
    pub post1: Vec<f64>,
    pub pre2: Vec<f64>,
    pub post2: Vec<f64>,
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

impl ForwardTrace {
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 })
            .sum::<f64>()
    }

    /// Highest-probability action, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest element; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

/// Encodes the neighbors, concatenates the self state and evaluates both heads.
pub fn network_forward(net: &NetworkParams, obs: &Observation) -> Result<ForwardTrace> {
    if obs.self_state.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericInput("self observation is not finite".into()));
    }
    let (h_n, lstm) = lstm_encode(net.lstm(), &obs.neighbors)?;
    let mlp = net.mlp();
    let mut encoded = Vec::with_capacity(obs.self_state.len() + h_n.len());
    encoded.extend_from_slice(&obs.self_state);
    encoded.extend_from_slice(&h_n);

    let fc = mlp.b1.len();
    let mut pre1 = vec![0.0; fc];
    mlp.w1.affine_into(&encoded, &mlp.b1, &mut pre1);
    let post1: Vec<f64> = pre1.iter().map(|x| x.max(0.0)).collect();
    let mut pre2 = vec![0.0; fc];
    mlp.w2.affine_into(&post1, &mlp.b2, &mut pre2);
    let post2: Vec<f64> = pre2.iter().map(|x| x.max(0.0)).collect();

    let mut logits = vec![0.0; mlp.b_policy.len()];
    mlp.w_policy.affine_into(&post2, &mlp.b_policy, &mut logits);
    let mut value = [0.0];
    mlp.w_value.affine_into(&post2, &mlp.b_value, &mut value);

    let log_probs = log_softmax(&logits);
    let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
    if !value[0].is_finite() || probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericInput("network output is not finite".into()));
    }
    Ok(ForwardTrace {
        lstm,
        encoded,
        pre1,
        post1,
        pre2,
        post2,
        logits,
        log_probs,
        probs,
        value: value[0],
    })
}
