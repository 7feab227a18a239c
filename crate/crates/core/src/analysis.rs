//! Input-gate attribution for the neighbor LSTM and the ordering-strategy
//! training comparison.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentState, NEIGHBOR_DIM};
use crate::env::{SimConfig, Simulator};
use crate::error::{Error, Result};
use crate::harness::test_cases;
use crate::network::forward::sigmoid;
use crate::network::params::dot;
use crate::network::{lstm_encode, LstmParams, NetworkParams, Observation, OrderingStrategy};
use crate::policies::{non_cooperative, PolicyTag};
use crate::training::{initialized_network, trainer_loop, RollingReward, TrainerConfig};

/// Input-gate attribution for one neighbor step. The three components sum
/// to `l1_mean`, the mean input-gate activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecomposition {
    pub step: usize,
    pub i_s: f64,
    pub i_h: f64,
    pub i_b: f64,
    pub l1_mean: f64,
}

/// Splits the input gate at one step into the shares driven by the neighbor
/// observation `s`, the previous hidden state `h` and the bias. Each raw
/// share is the distance between the gate and the gate recomputed without
/// that input; the shares are then rescaled to sum to the mean gate value.
pub fn input_gate_decompose(
    params: &LstmParams,
    s: &[f64; NEIGHBOR_DIM],
    h: &[f64],
    step: usize,
) -> Result<GateDecomposition> {
    let n = params.hidden();
    if h.len() != n {
        return Err(Error::InvalidArgument(format!(
            "hidden state has {} entries, expected {n}",
            h.len()
        )));
    }
    if s.iter().chain(h).any(|x| !x.is_finite()) {
        return Err(Error::NumericInput("gate input is not finite".into()));
    }
    let (mut dev_s, mut dev_h, mut dev_b, mut l1) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let row = params.w_input.row(k);
        let zs = dot(&row[..NEIGHBOR_DIM], s);
        let zh = dot(&row[NEIGHBOR_DIM..], h);
        let b = params.b_input[k];
        let gate = sigmoid(zs + zh + b);
        l1 += gate.abs();
        dev_s += (gate - sigmoid(zh + b)).powi(2);
        dev_h += (gate - sigmoid(zs + b)).powi(2);
        dev_b += (gate - sigmoid(zs + zh)).powi(2);
    }
    let (dev_s, dev_h, dev_b) = (dev_s.sqrt(), dev_h.sqrt(), dev_b.sqrt());
    let total = dev_s + dev_h + dev_b;
    if total == 0.0 {
        return Err(Error::DegenerateDecomposition);
    }
    let l1_mean = l1 / n as f64;
    let k = l1_mean / total;
    Ok(GateDecomposition {
        step,
        i_s: k * dev_s,
        i_h: k * dev_h,
        i_b: k * dev_b,
        l1_mean,
    })
}

/// Decomposes the input gate at every neighbor step of `agent`'s view.
pub fn gate_trace(
    net: &NetworkParams,
    agent: &AgentState,
    others: &[AgentState],
    ordering: OrderingStrategy,
) -> Result<Vec<GateDecomposition>> {
    let obs = Observation::observe(agent, others, ordering);
    gate_trace_observation(net, &obs)
}

/// Same as [`gate_trace`] for an already ordered observation.
pub fn gate_trace_observation(
    net: &NetworkParams,
    obs: &Observation,
) -> Result<Vec<GateDecomposition>> {
    let (_, trace) = lstm_encode(net.lstm(), &obs.neighbors)?;
    trace
        .steps
        .iter()
        .zip(&obs.neighbors)
        .enumerate()
        .map(|(j, (step, s))| input_gate_decompose(net.lstm(), s, step.prev_hidden(), j))
        .collect()
}

/// Writes `scenario_id,step_j,i_s,i_h,i_b,l1_mean` rows.
pub fn write_gate_csv<W: Write>(rows: &[(usize, Vec<GateDecomposition>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::format("gate trace", e);
    w.write_record(["scenario_id", "step_j", "i_s", "i_h", "i_b", "l1_mean"])
        .map_err(wrap)?;
    for (scene, trace) in rows {
        for g in trace {
            w.write_record([
                scene.to_string(),
                g.step.to_string(),
                g.i_s.to_string(),
                g.i_h.to_string(),
                g.i_b.to_string(),
                g.l1_mean.to_string(),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io("gate trace", e))
}

/// Gate traces for agent 0 of `n_scenes` random scenes. Each scene is first
/// advanced `warmup` steps with every agent driving straight to its goal, so
/// neighbors carry velocities when observed.
pub fn gate_scenes(
    net: &NetworkParams,
    n_scenes: usize,
    n_agents: usize,
    warmup: usize,
    ordering: OrderingStrategy,
    seed: u64,
) -> Result<Vec<(usize, Vec<GateDecomposition>)>> {
    let sim = SimConfig {
        action_set: net.meta.action_set,
        ..SimConfig::default()
    };
    test_cases(n_agents, n_scenes, seed)?
        .into_iter()
        .enumerate()
        .map(|(id, spec)| {
            let spec = spec.with_policy(PolicyTag::NonCooperative);
            let mut simulator = Simulator::new(&spec, sim)?;
            for _ in 0..warmup {
                if simulator.is_done() {
                    break;
                }
                let actions: Vec<Option<usize>> = simulator
                    .states()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        s.status
                            .is_active()
                            .then(|| non_cooperative(s, simulator.action_space(i)))
                    })
                    .collect();
                simulator.step(&actions)?;
            }
            let me = simulator.states()[0];
            let others = simulator.others(0);
            Ok((id, gate_trace(net, &me, &others, ordering)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingExperimentConfig {
    pub trainer: TrainerConfig,
    pub strategies: Vec<OrderingStrategy>,
}

impl Default for OrderingExperimentConfig {
    fn default() -> Self {
        OrderingExperimentConfig {
            trainer: TrainerConfig::default(),
            strategies: OrderingStrategy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrderingRun {
    pub strategy: OrderingStrategy,
    pub curve: RollingReward,
    pub curve_path: Option<PathBuf>,
}

/// Trains one policy per strategy from identical seeds and writes
/// `rolling_reward_<strategy>.csv` for each into `out_dir`.
pub fn ordering_experiment(
    cfg: &OrderingExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<OrderingRun>> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut runs = Vec::with_capacity(cfg.strategies.len());
    for &strategy in &cfg.strategies {
        let trainer = TrainerConfig {
            ordering: strategy,
            ..cfg.trainer.clone()
        };
        let init = initialized_network(&trainer)?;
        let outcome = trainer_loop(&trainer, init, None, None)?;
        let curve_path = match out_dir {
            Some(dir) => {
                let path = dir.join(format!("rolling_reward_{strategy}.csv"));
                let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                outcome.curve.write_csv(file)?;
                Some(path)
            }
            None => None,
        };
        runs.push(OrderingRun {
            strategy,
            curve: outcome.curve,
            curve_path,
        });
    }
    Ok(runs)
}
