//! Supervised initialization, experience generation and the actor-critic
//! trainer with its two-phase curriculum.
//!
//! Training proceeds in synchronous rounds: every round runs `workers`
//! episodes against one frozen parameter snapshot, merges their experience
//! into the queue in episode order, then drains full batches through the
//! optimizer. Each episode draws from its own RNG stream, so a run is a pure
//! function of its configuration regardless of thread scheduling.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{wrap_angle, ActionSpace, AgentState, AgentStatus};
use crate::env::{
    random_test_case, ScenarioSpec, SimConfig, Simulator, RADIUS_RANGE, V_PREF_RANGE,
};
use crate::error::{Error, Result};
use crate::network::checkpoint::save_checkpoint;
use crate::network::{
    backward, network_forward, supervised_backward, supervised_loss, Adam, AdamConfig,
    LabeledSample, LossConfig, NetworkConfig, NetworkParams, Observation, OrderingStrategy, Sample,
};
use crate::policies::{
    non_cooperative, sample_categorical, select_action, PolicyContext, PolicyTag,
};

/// One GA3C agent transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub episode: u64,
    pub step: usize,
    /// Set on the last transition of an agent that reached its goal or
    /// collided. A timed-out agent's last transition is not terminal.
    pub terminal: bool,
}

/// Discounted n-step returns over one bootstrap segment:
/// `R_t = r_t + gamma R_{t+1}`, ending in `bootstrap`.
pub fn compute_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Per-agent probabilities of each training policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyMix {
    pub ga3c: f64,
    pub non_cooperative: f64,
    pub zero_velocity: f64,
}

impl Default for PolicyMix {
    fn default() -> Self {
        PolicyMix {
            ga3c: 0.8,
            non_cooperative: 0.1,
            zero_velocity: 0.1,
        }
    }
}

impl PolicyMix {
    pub fn only(tag: PolicyTag) -> Self {
        let mut mix = PolicyMix {
            ga3c: 0.0,
            non_cooperative: 0.0,
            zero_velocity: 0.0,
        };
        match tag {
            PolicyTag::NonCooperative => mix.non_cooperative = 1.0,
            PolicyTag::ZeroVelocity => mix.zero_velocity = 1.0,
            _ => mix.ga3c = 1.0,
        }
        mix
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.ga3c, self.non_cooperative, self.zero_velocity];
        if parts.iter().any(|p| !(*p >= 0.0)) || !(parts.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidArgument(
                "policy mix weights must be non-negative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PolicyTag {
        let total = self.ga3c + self.non_cooperative + self.zero_velocity;
        let u = rng.gen::<f64>() * total;
        if u < self.ga3c {
            PolicyTag::Ga3c
        } else if u < self.ga3c + self.non_cooperative {
            PolicyTag::NonCooperative
        } else {
            PolicyTag::ZeroVelocity
        }
    }
}

/// Curriculum stage: episode budget and agent-count range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub episodes: u64,
    pub min_agents: usize,
    pub max_agents: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub value_weight: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            samples: 10_000,
            epochs: 20,
            batch_size: 100,
            learning_rate: 1e-3,
            value_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub beta: f64,
    pub value_weight: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub n_step: usize,
    pub phase1: Phase,
    pub phase2: Phase,
    /// Episodes run against one snapshot before the next update round.
    pub workers: usize,
    pub seed: u64,
    pub window: usize,
    pub policy_mix: PolicyMix,
    pub ordering: OrderingStrategy,
    pub network: NetworkConfig,
    pub sim: SimConfig,
    pub supervised: SupervisedConfig,
    /// Save a checkpoint every this many episodes; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 2e-5,
            beta: 1e-4,
            value_weight: 0.5,
            gamma: 0.97,
            batch_size: 100,
            n_step: 5,
            phase1: Phase {
                episodes: 20_000,
                min_agents: 2,
                max_agents: 4,
            },
            phase2: Phase {
                episodes: 0,
                min_agents: 2,
                max_agents: 10,
            },
            workers: 8,
            seed: 0,
            window: 200,
            policy_mix: PolicyMix::default(),
            ordering: OrderingStrategy::ClosestLast,
            network: NetworkConfig::default(),
            sim: SimConfig::default(),
            supervised: SupervisedConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("supervised.learning_rate", self.supervised.learning_rate),
            ("value_weight", self.value_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidArgument("beta must be non-negative".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument("gamma must lie in (0, 1)".into()));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("n_step", self.n_step),
            ("workers", self.workers),
            ("window", self.window),
            ("supervised.batch_size", self.supervised.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        for phase in [&self.phase1, &self.phase2] {
            if phase.min_agents < 1 || phase.max_agents < phase.min_agents {
                return Err(Error::InvalidArgument(format!(
                    "bad agent range {}..={}",
                    phase.min_agents, phase.max_agents
                )));
            }
        }
        if self.network.actions != self.sim.action_set.len() {
            return Err(Error::Configuration(
                "policy head size differs from the action set".into(),
            ));
        }
        self.policy_mix.validate()?;
        self.sim.validate()
    }

    pub fn total_episodes(&self) -> u64 {
        self.phase1.episodes + self.phase2.episodes
    }

    pub fn phase_for(&self, episode: u64) -> Phase {
        if episode < self.phase1.episodes {
            self.phase1
        } else {
            self.phase2
        }
    }

    fn loss(&self) -> LossConfig {
        LossConfig {
            beta: self.beta,
            value_weight: self.value_weight,
        }
    }
}

/// Mean per-episode GA3C reward with a trailing-window average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingReward {
    pub window: usize,
    /// Mean total reward of the GA3C agents, one entry per episode that
    /// had any.
    pub episode_reward: Vec<f64>,
    /// Global episode index of each entry.
    pub episode_index: Vec<u64>,
    pub rolling: Vec<f64>,
    sum: f64,
}

impl RollingReward {
    pub fn new(window: usize) -> Self {
        RollingReward {
            window: window.max(1),
            episode_reward: Vec::new(),
            episode_index: Vec::new(),
            rolling: Vec::new(),
            sum: 0.0,
        }
    }

    pub fn push(&mut self, episode: u64, reward: f64) {
        self.sum += reward;
        self.episode_reward.push(reward);
        self.episode_index.push(episode);
        let n = self.episode_reward.len();
        if n > self.window {
            self.sum -= self.episode_reward[n - 1 - self.window];
        }
        // Recompute periodically to keep the running sum from drifting.
        if n % 4096 == 0 {
            self.sum = self.episode_reward[n.saturating_sub(self.window)..]
                .iter()
                .sum();
        }
        self.rolling.push(self.sum / n.min(self.window) as f64);
    }

    pub fn last(&self) -> Option<f64> {
        self.rolling.last().copied()
    }

    pub fn len(&self) -> usize {
        self.rolling.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rolling.is_empty()
    }

    /// Writes `episode,reward` rows with the rolling mean.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let wrap = |e: csv::Error| Error::format("rolling reward", e);
        w.write_record(["episode", "reward"]).map_err(wrap)?;
        for (e, r) in self.episode_index.iter().zip(&self.rolling) {
            w.write_record([e.to_string(), r.to_string()])
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("rolling reward", e))
    }
}

// ---------------------------------------------------------------------------
// Supervised initialization

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..range.1)
}

/// One random ego agent with up to three distant neighbors, goal at most
/// `max_goal_dist` away and an arbitrary heading.
pub fn sparse_scene<R: Rng + ?Sized>(
    rng: &mut R,
    max_neighbors: usize,
    max_goal_dist: f64,
) -> (AgentState, Vec<AgentState>) {
    let radius = uniform(rng, RADIUS_RANGE);
    let v_pref = uniform(rng, V_PREF_RANGE);
    let dist = rng.gen_range(0.0..max_goal_dist);
    let bearing = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let heading = wrap_angle(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
    let agent = AgentState::new(
        (0.0, 0.0),
        (dist * bearing.cos(), dist * bearing.sin()),
        radius,
        v_pref,
    )
    .with_heading(heading);
    let count = rng.gen_range(0..=max_neighbors);
    let others = (0..count)
        .map(|_| {
            let r = uniform(rng, RADIUS_RANGE);
            let d = rng.gen_range(radius + r + 1.0..radius + r + 6.0);
            let a = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let speed = rng.gen_range(0.0..V_PREF_RANGE.1);
            let dir = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (px, py) = (d * a.cos(), d * a.sin());
            AgentState::new(
                (px, py),
                (px + dir.cos(), py + dir.sin()),
                r,
                V_PREF_RANGE.1,
            )
            .with_velocity(speed * dir.cos(), speed * dir.sin())
        })
        .collect();
    (agent, others)
}

/// Straight-to-goal expert dataset: action from the non-cooperative policy
/// and value label `gamma^{d_g}`.
pub fn synth_init_dataset<R: Rng + ?Sized>(
    n_samples: usize,
    gamma: f64,
    ordering: OrderingStrategy,
    rng: &mut R,
) -> Vec<LabeledSample> {
    (0..n_samples)
        .map(|_| {
            let (agent, others) = sparse_scene(rng, 3, 10.0);
            let space = ActionSpace::new(agent.v_pref).expect("v_pref sampled positive");
            LabeledSample {
                obs: Observation::observe(&agent, &others, ordering),
                action: non_cooperative(&agent, &space),
                value: gamma.powf(agent.dist_to_goal()),
            }
        })
        .collect()
}

/// Mean supervised loss per sample after each epoch.
pub fn supervised_init<R: Rng + ?Sized>(
    net: &mut NetworkParams,
    dataset: &[LabeledSample],
    cfg: &SupervisedConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("supervised dataset is empty".into()));
    }
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &net.config(),
    );
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let (grads, loss) = supervised_backward(net, &batch, cfg.value_weight)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence(format!(
                    "supervised loss in epoch {epoch}"
                )));
            }
            adam.step(net, &grads)?;
        }
        let loss = supervised_loss(net, dataset, cfg.value_weight)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence(format!(
                "supervised loss after epoch {epoch}"
            )));
        }
        curve.push(loss.total / dataset.len() as f64);
    }
    Ok(curve)
}

/// Fresh network trained on a synthesized expert dataset.
pub fn initialized_network(cfg: &TrainerConfig) -> Result<NetworkParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = NetworkParams::random(&cfg.network, &mut rng);
    net.meta.gamma = cfg.gamma;
    net.meta.action_set = cfg.sim.action_set;
    let data = synth_init_dataset(cfg.supervised.samples, cfg.gamma, cfg.ordering, &mut rng);
    supervised_init(&mut net, &data, &cfg.supervised, &mut rng)?;
    Ok(net)
}

// ---------------------------------------------------------------------------
// Experience generation

/// Transitions of one GA3C agent in one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub agent: usize,
    pub steps: Vec<Experience>,
    /// Critic estimate at each step's observation under the snapshot.
    pub values: Vec<f64>,
    /// Critic estimate after the last step; zero for terminal trajectories.
    pub final_value: f64,
}

impl Trajectory {
    /// n-step returns, each `k`-step segment bootstrapped from the critic.
    pub fn returns(&self, k: usize, gamma: f64) -> Vec<f64> {
        let n = self.steps.len();
        let mut out = Vec::with_capacity(n);
        let rewards: Vec<f64> = self.steps.iter().map(|e| e.reward).collect();
        let mut start = 0;
        while start < n {
            let end = (start + k).min(n);
            let bootstrap = if end < n {
                self.values[end]
            } else {
                self.final_value
            };
            out.extend(compute_returns(&rewards[start..end], bootstrap, gamma));
            start = end;
        }
        out
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|e| e.reward).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRollout {
    pub episode: u64,
    pub policies: Vec<PolicyTag>,
    pub trajectories: Vec<Trajectory>,
    pub statuses: Vec<AgentStatus>,
}

impl EpisodeRollout {
    pub fn experiences(&self) -> impl Iterator<Item = &Experience> {
        self.trajectories.iter().flat_map(|t| t.steps.iter())
    }

    /// Mean total reward over the GA3C agents, if there were any.
    pub fn mean_reward(&self) -> Option<f64> {
        if self.trajectories.is_empty() {
            return None;
        }
        let total: f64 = self.trajectories.iter().map(Trajectory::total_reward).sum();
        Some(total / self.trajectories.len() as f64)
    }

    pub fn samples(&self, k: usize, gamma: f64) -> Vec<Sample> {
        let mut out = Vec::new();
        for t in &self.trajectories {
            for (e, ret) in t.steps.iter().zip(t.returns(k, gamma)) {
                out.push(Sample {
                    obs: e.obs.clone(),
                    action: e.action,
                    ret,
                });
            }
        }
        out
    }
}

/// Runs one episode of `spec`, sampling GA3C actions from the snapshot's
/// policy. The episode stops once no GA3C agent is active, since the
/// remaining agents cannot contribute experience.
pub fn run_training_episode<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    snapshot: &NetworkParams,
    cfg: &TrainerConfig,
    episode: u64,
    rng: &mut R,
) -> Result<EpisodeRollout> {
    let mut sim = Simulator::new(spec, cfg.sim)?;
    let policies: Vec<PolicyTag> = spec.agents.iter().map(|a| a.policy).collect();
    let ctx = PolicyContext {
        ordering: cfg.ordering,
        ..PolicyContext::new(Some(snapshot))
    };
    let learners: Vec<usize> = (0..policies.len())
        .filter(|&i| policies[i] == PolicyTag::Ga3c)
        .collect();
    let mut trajectories: Vec<Trajectory> = learners
        .iter()
        .map(|&agent| Trajectory {
            agent,
            steps: Vec::new(),
            values: Vec::new(),
            final_value: 0.0,
        })
        .collect();

    let mut pending: Vec<Option<Observation>> = vec![None; policies.len()];
    while learners.iter().any(|&i| sim.states()[i].status.is_active()) {
        let n = policies.len();
        let mut actions = vec![None; n];
        for i in 0..n {
            let me = sim.states()[i];
            if !me.status.is_active() {
                continue;
            }
            let others = sim.others(i);
            let space = sim.action_space(i);
            actions[i] = Some(if policies[i] == PolicyTag::Ga3c {
                let obs = Observation::observe(&me, &others, cfg.ordering);
                let trace = network_forward(snapshot, &obs)?;
                let a = sample_categorical(&trace.probs, rng);
                let slot = learners.iter().position(|&l| l == i).unwrap();
                trajectories[slot].values.push(trace.value);
                pending[i] = Some(obs);
                a
            } else {
                select_action(policies[i], &me, &others, space, &ctx)?
            });
        }
        let step = sim.steps_taken();
        let rewards = sim.step(&actions)?;
        for (slot, &i) in learners.iter().enumerate() {
            if let (Some(obs), Some(r)) = (pending[i].take(), rewards[i]) {
                let status = sim.states()[i].status;
                trajectories[slot].steps.push(Experience {
                    obs,
                    action: actions[i].unwrap(),
                    reward: r,
                    episode,
                    step,
                    terminal: matches!(status, AgentStatus::AtGoal | AgentStatus::Collided),
                });
            }
        }
    }

    for t in &mut trajectories {
        let status = sim.states()[t.agent].status;
        t.final_value = if status == AgentStatus::TimedOut {
            let obs =
                Observation::observe(&sim.states()[t.agent], &sim.others(t.agent), cfg.ordering);
            network_forward(snapshot, &obs)?.value
        } else {
            0.0
        };
    }
    Ok(EpisodeRollout {
        episode,
        policies,
        trajectories,
        statuses: sim.states().iter().map(|s| s.status).collect(),
    })
}

/// RNG for one episode: the run seed with the episode index as stream.
pub fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

/// Draws a scenario for `phase` and assigns policies from the mix.
/// Generation failures are retried with a fresh scenario seed.
pub fn training_scenario<R: Rng + ?Sized>(
    phase: &Phase,
    mix: &PolicyMix,
    rng: &mut R,
) -> Result<ScenarioSpec> {
    let n = rng.gen_range(phase.min_agents..=phase.max_agents);
    let mut last = None;
    for _ in 0..16 {
        match random_test_case(n, rng.gen()) {
            Ok(mut spec) => {
                for a in &mut spec.agents {
                    a.policy = mix.draw(rng);
                }
                return Ok(spec);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or(Error::ScenarioGeneration { attempts: 0 }))
}

/// One worker's stream: episodes `episodes` under a fixed snapshot.
pub fn worker_loop(
    cfg: &TrainerConfig,
    snapshot: &NetworkParams,
    episodes: std::ops::Range<u64>,
) -> Result<Vec<EpisodeRollout>> {
    episodes
        .map(|ep| {
            let mut rng = episode_rng(cfg.seed, ep);
            let spec = training_scenario(&cfg.phase_for(ep), &cfg.policy_mix, &mut rng)?;
            run_training_episode(&spec, snapshot, cfg, ep, &mut rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Trainer

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub net: NetworkParams,
    pub curve: RollingReward,
    pub episodes: u64,
    pub updates: u64,
    pub experiences: u64,
}

/// Progress hook, called after every round with the episodes completed and
/// the current rolling reward.
pub type ProgressFn<'a> = dyn FnMut(u64, Option<f64>) + 'a;

/// Trains `net` (normally the supervised initialization) through both
/// phases. With `out_dir`, writes `config.json`, periodic and final
/// checkpoints and `rolling_reward.csv`.
pub fn trainer_loop(
    cfg: &TrainerConfig,
    mut net: NetworkParams,
    out_dir: Option<&Path>,
    progress: Option<&mut ProgressFn<'_>>,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if net.num_actions() != cfg.sim.action_set.len() {
        return Err(Error::Configuration(
            "network head does not match the simulator action set".into(),
        ));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(cfg).expect("config serializes");
        let path = dir.join("config.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    let mut noop = |_: u64, _: Option<f64>| {};
    let progress: &mut ProgressFn<'_> = match progress {
        Some(p) => p,
        None => &mut noop,
    };

    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &net.config(),
    );
    let loss_cfg = cfg.loss();
    let mut curve = RollingReward::new(cfg.window);
    let mut queue: VecDeque<Sample> = VecDeque::new();
    let mut updates = 0u64;
    let mut experiences = 0u64;
    let total = cfg.total_episodes();
    let mut next_checkpoint = if cfg.checkpoint_every > 0 {
        cfg.checkpoint_every
    } else {
        u64::MAX
    };

    let mut done = 0u64;
    while done < total {
        // Never let one round straddle the phase switch.
        let boundary = if done < cfg.phase1.episodes {
            cfg.phase1.episodes
        } else {
            total
        };
        let end = (done + cfg.workers as u64).min(boundary);
        let snapshot = &net;
        let rollouts: Vec<EpisodeRollout> = (done..end)
            .into_par_iter()
            .map(|ep| worker_loop(cfg, snapshot, ep..ep + 1).map(|mut v| v.remove(0)))
            .collect::<Result<_>>()?;

        for r in &rollouts {
            if let Some(m) = r.mean_reward() {
                curve.push(r.episode, m);
            }
            let samples = r.samples(cfg.n_step, cfg.gamma);
            experiences += samples.len() as u64;
            queue.extend(samples);
        }
        while queue.len() >= cfg.batch_size {
            let batch: Vec<Sample> = queue.drain(..cfg.batch_size).collect();
            let (grads, loss) = backward(&net, &batch, &loss_cfg)?;
            if !loss.total.is_finite() || !grads.all_finite() {
                if let Some(dir) = out_dir {
                    save_checkpoint(&net, dir.join("diverged.ckpt"))?;
                }
                return Err(Error::Divergence(format!(
                    "non-finite loss at update {updates} (episode {end})"
                )));
            }
            adam.step(&mut net, &grads)?;
            updates += 1;
        }
        done = end;
        if done >= next_checkpoint {
            if let Some(dir) = out_dir {
                save_checkpoint(&net, dir.join(format!("checkpoint_{done:08}.ckpt")))?;
            }
            next_checkpoint = (done / cfg.checkpoint_every + 1) * cfg.checkpoint_every;
        }
        progress(done, curve.last());
    }

    if let Some(dir) = out_dir {
        save_checkpoint(&net, dir.join("final.ckpt"))?;
        let path = dir.join("rolling_reward.csv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        curve.write_csv(file)?;
    }
    Ok(TrainingOutcome {
        net,
        curve,
        episodes: done,
        updates,
        experiences,
    })
}

/// Paths written by [`trainer_loop`] into a run directory.
pub fn run_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join("config.json"),
        dir.join("final.ckpt"),
        dir.join("rolling_reward.csv"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::FULL_SPEED_BLOCK;
    use crate::env::AgentSpec;
    use proptest::prelude::*;

    fn tiny_cfg() -> TrainerConfig {
        TrainerConfig {
            network: NetworkConfig {
                hidden: 8,
                fc: 16,
                actions: 11,
            },
            phase1: Phase {
                episodes: 6,
                min_agents: 2,
                max_agents: 3,
            },
            phase2: Phase {
                episodes: 4,
                min_agents: 2,
                max_agents: 5,
            },
            workers: 3,
            batch_size: 20,
            ..TrainerConfig::default()
        }
    }

    #[test]
    fn returns_fixtures() {
        let r = compute_returns(&[0.0, 0.0, 1.0], 0.0, 0.97);
        assert!((r[0] - 0.97f64 * 0.97).abs() < 1e-15);
        assert_eq!(r[0], 0.9409);
        assert_eq!(compute_returns(&[0.3], 0.0, 0.97), vec![0.3]);
        let r = compute_returns(&[0.0, 0.0], 0.5, 0.97);
        assert!((r[0] - 0.5 * 0.9409).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn returns_suffix_consistent(
            rewards in prop::collection::vec(-0.25f64..1.0, 1..20),
            boot in -1.0f64..1.0,
            cut in 0usize..20,
        ) {
            let cut = cut % rewards.len();
            let full = compute_returns(&rewards, boot, 0.97);
            let tail = compute_returns(&rewards[cut..], boot, 0.97);
            for (a, b) in full[cut..].iter().zip(&tail) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trajectory_segments_bootstrap_from_critic() {
        let obs = Observation {
            self_state: [1.0, 1.0, 0.0, 0.3],
            neighbors: vec![],
        };
        let step = |reward: f64, terminal: bool| Experience {
            obs: obs.clone(),
            action: 0,
            reward,
            episode: 0,
            step: 0,
            terminal,
        };
        let t = Trajectory {
            agent: 0,
            steps: vec![
                step(0.0, false),
                step(0.0, false),
                step(0.0, false),
                step(1.0, true),
            ],
            values: vec![0.1, 0.2, 0.4, 0.8],
            final_value: 0.0,
        };
        let g = 0.97;
        let r = t.returns(2, g);
        assert!((r[0] - g * g * 0.4).abs() < 1e-15);
        assert!((r[1] - g * 0.4).abs() < 1e-15);
        assert!((r[2] - g).abs() < 1e-15);
        assert_eq!(r[3], 1.0);
    }

    #[test]
    fn rolling_reward_window() {
        let mut rr = RollingReward::new(2);
        rr.push(0, 1.0);
        rr.push(1, 0.0);
        rr.push(2, 0.5);
        assert_eq!(rr.rolling, vec![1.0, 0.5, 0.25]);
        let mut out = Vec::new();
        rr.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "episode,reward\n0,1\n1,0.5\n2,0.25\n"
        );
    }

    #[test]
    fn dataset_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = synth_init_dataset(200, 0.97, OrderingStrategy::ClosestLast, &mut rng);
        for s in &data {
            assert!((s.value - 0.97f64.powf(s.obs.self_state[0])).abs() < 1e-15);
            assert!(s.action < FULL_SPEED_BLOCK);
            assert!(s.obs.neighbors.len() <= 3);
        }
        assert_eq!(0.97f64.powf(0.0), 1.0);
        assert_eq!(0.97f64.powf(1.0), 0.97);
    }

    #[test]
    fn dead_ahead_expert_is_smallest_turn() {
        let agent = AgentState::new((0.0, 0.0), (4.0, 0.0), 0.4, 1.2);
        let space = ActionSpace::new(1.2).unwrap();
        let a = space.get(non_cooperative(&agent, &space)).unwrap();
        assert_eq!(a.speed, 1.2);
        assert!((a.heading_change.abs() - std::f64::consts::PI / 30.0).abs() < 1e-12);
    }

    #[test]
    fn supervised_memorizes_one_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = tiny_cfg();
        let mut net = NetworkParams::random(&cfg.network, &mut rng);
        let data = vec![LabeledSample {
            obs: Observation {
                self_state: [3.0, 1.0, 0.4, 0.3],
                neighbors: vec![[2.0, 1.0, 0.0, -1.0, 0.3, 2.2, 0.6]],
            },
            action: 7,
            value: 0.97f64.powi(3),
        }];
        let sup = SupervisedConfig {
            epochs: 200,
            learning_rate: 1e-2,
            ..SupervisedConfig::default()
        };
        supervised_init(&mut net, &data, &sup, &mut rng).unwrap();
        let out = network_forward(&net, &data[0].obs).unwrap();
        assert_eq!(out.argmax(), 7);
        assert!((out.value - data[0].value).abs() < 0.01);
    }

    #[test]
    fn supervised_loss_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = tiny_cfg();
        let mut net = NetworkParams::random(&cfg.network, &mut rng);
        let data = synth_init_dataset(300, 0.97, OrderingStrategy::ClosestLast, &mut rng);
        let sup = SupervisedConfig {
            epochs: 10,
            batch_size: 300,
            ..SupervisedConfig::default()
        };
        let curve = supervised_init(&mut net, &data, &sup, &mut rng).unwrap();
        for w in curve.windows(2) {
            assert!(w[1] < w[0], "{curve:?}");
        }
        assert!(supervised_init(&mut net, &[], &sup, &mut rng).is_err());
    }

    #[test]
    fn categorical_sampling_chi_square() {
        let probs = [
            0.3, 0.2, 0.15, 0.1, 0.08, 0.06, 0.05, 0.03, 0.02, 0.007, 0.003,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        let mut counts = [0usize; 11];
        for _ in 0..n {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&c, p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 0.999 quantile of chi-square with 10 degrees of freedom.
        assert!(chi2 < 29.588, "chi2 = {chi2}");
    }

    fn two_agent_spec(policy: PolicyTag) -> ScenarioSpec {
        let agent = |px: f64, py: f64, gx: f64, gy: f64| AgentSpec {
            px,
            py,
            gx,
            gy,
            radius: 0.3,
            v_pref: 1.0,
            policy,
        };
        ScenarioSpec {
            domain_side_m: 8.0,
            seed: 0,
            agents: vec![agent(-3.0, 0.0, 0.0, 0.0), agent(0.0, 3.0, 0.0, 8.0)],
        }
    }

    #[test]
    fn non_learning_episode_emits_nothing() {
        let cfg = tiny_cfg();
        let net = NetworkParams::random(&cfg.network, &mut ChaCha8Rng::seed_from_u64(7));
        let spec = two_agent_spec(PolicyTag::NonCooperative);
        let out =
            run_training_episode(&spec, &net, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.experiences().count(), 0);
        assert_eq!(out.mean_reward(), None);
    }

    #[test]
    fn stream_ends_at_arrival() {
        // A large bias makes the policy pick the half-speed straight action
        // (index 7) with probability one in floating point.
        let mut cfg = tiny_cfg();
        cfg.sim.goal_tolerance = Some(1e-6);
        let mut net = NetworkParams::zeros(&cfg.network);
        net.weights.mlp.b_policy[7] = 800.0;
        let mut spec = two_agent_spec(PolicyTag::Ga3c);
        spec.agents[0].px = -1.5;
        spec.agents[1].gy = 30.0;
        let out =
            run_training_episode(&spec, &net, &cfg, 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(out.statuses[0], AgentStatus::AtGoal);
        let first = &out.trajectories[0];
        let last = first.steps.last().unwrap();
        assert!(last.terminal);
        assert_eq!(first.steps.len(), 15);
        assert!(((last.step + 1) as f64 * cfg.sim.dt - 3.0).abs() < 1e-9);
        assert!(first.steps[..14].iter().all(|e| !e.terminal));
        assert!(out.trajectories[1].steps.len() > 15);
    }

    #[test]
    fn worker_stream_is_deterministic() {
        let cfg = tiny_cfg();
        let net = NetworkParams::random(&cfg.network, &mut ChaCha8Rng::seed_from_u64(8));
        let a = worker_loop(&cfg, &net, 0..4).unwrap();
        let b = worker_loop(&cfg, &net, 0..4).unwrap();
        assert_eq!(a, b);
        for r in &a {
            for e in r.experiences() {
                assert!(e.reward >= -0.25 && e.reward <= 1.0);
                assert!(e.action < 11);
            }
        }
    }

    #[test]
    fn trainer_runs_phases_and_writes_run_dir() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let init = NetworkParams::random(&cfg.network, &mut ChaCha8Rng::seed_from_u64(9));
        let mut seen = Vec::new();
        let mut hook = |ep: u64, _r: Option<f64>| seen.push(ep);
        let out = trainer_loop(&cfg, init.clone(), Some(dir.path()), Some(&mut hook)).unwrap();
        assert_eq!(out.episodes, 10);
        // Rounds stop at the phase boundary (6) and then continue.
        assert_eq!(seen, vec![3, 6, 9, 10]);
        assert_eq!(out.updates, out.experiences / 20);
        let (config, ckpt, csv) = run_paths(dir.path());
        assert!(config.exists() && ckpt.exists() && csv.exists());
        let again = trainer_loop(&cfg, init, None, None).unwrap();
        assert_eq!(again.net, out.net);
        assert_eq!(again.curve, out.curve);
    }

    #[test]
    fn zero_advantage_batch_moves_only_value_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = tiny_cfg();
        let net = NetworkParams::random(&cfg.network, &mut rng);
        let obs = Observation {
            self_state: [2.0, 1.0, 0.1, 0.3],
            neighbors: vec![[1.5, 0.5, 0.0, 0.0, 0.3, 1.6, 0.6]],
        };
        let v = network_forward(&net, &obs).unwrap().value;
        let batch = vec![
            Sample {
                obs,
                action: 3,
                ret: v
            };
            4
        ];
        let loss = LossConfig {
            beta: 0.0,
            value_weight: 0.5,
        };
        let (g, _) = backward(&net, &batch, &loss).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }
}
