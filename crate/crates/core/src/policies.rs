//! Decision rules. Every policy returns an index into the agent's
//! [`ActionSpace`]; ties always go to the lowest index.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{kinematic_step, wrap_angle, ActionSpace, AgentState};
use crate::env::{d_min, reward_value, RewardConfig};
use crate::error::{Error, Result};
use crate::network::forward::argmax;
use crate::network::{network_forward, NetworkParams, Observation, OrderingStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyTag {
    #[serde(rename = "noncoop")]
    NonCooperative,
    #[serde(rename = "zero")]
    ZeroVelocity,
    #[serde(rename = "ga3c")]
    Ga3c,
    #[serde(rename = "cadrl")]
    Cadrl,
}

impl PolicyTag {
    pub const ALL: [PolicyTag; 4] = [
        PolicyTag::NonCooperative,
        PolicyTag::ZeroVelocity,
        PolicyTag::Ga3c,
        PolicyTag::Cadrl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyTag::NonCooperative => "noncoop",
            PolicyTag::ZeroVelocity => "zero",
            PolicyTag::Ga3c => "ga3c",
            PolicyTag::Cadrl => "cadrl",
        }
    }

    /// Whether the policy needs network weights.
    pub fn is_learned(self) -> bool {
        matches!(self, PolicyTag::Ga3c | PolicyTag::Cadrl)
    }
}

impl fmt::Display for PolicyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyTag::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy {s:?}")))
    }
}

/// Full-speed action whose resulting heading points closest to the goal.
pub fn non_cooperative(agent: &AgentState, space: &ActionSpace) -> usize {
    let bearing = if agent.dist_to_goal() > 0.0 {
        (agent.gy - agent.py).atan2(agent.gx - agent.px)
    } else {
        agent.heading
    };
    let top = space.iter().map(|a| a.speed).fold(0.0, f64::max);
    let mut best = None::<(usize, f64)>;
    for (k, a) in space.iter().enumerate() {
        if a.speed != top {
            continue;
        }
        let err = wrap_angle(bearing - agent.heading - a.heading_change).abs();
        if best.map_or(true, |(_, e)| err < e) {
            best = Some((k, err));
        }
    }
    best.map_or(0, |(k, _)| k)
}

/// Zero-speed action with no turn, or the smallest turn available.
pub fn zero_velocity(space: &ActionSpace) -> usize {
    let mut best = None::<(usize, f64)>;
    for (k, a) in space.iter().enumerate() {
        if a.speed != 0.0 {
            continue;
        }
        let turn = a.heading_change.abs();
        if best.map_or(true, |(_, t)| turn < t) {
            best = Some((k, turn));
        }
    }
    best.map_or(0, |(k, _)| k)
}

fn check_head(net: &NetworkParams, space: &ActionSpace) -> Result<()> {
    if net.num_actions() != space.len() {
        return Err(Error::Configuration(format!(
            "policy head has {} outputs but the action space has {}",
            net.num_actions(),
            space.len()
        )));
    }
    Ok(())
}

/// Most probable action of the learned policy.
pub fn ga3c_inference(
    agent: &AgentState,
    others: &[AgentState],
    net: &NetworkParams,
    space: &ActionSpace,
    ordering: OrderingStrategy,
) -> Result<usize> {
    check_head(net, space)?;
    let obs = Observation::observe(agent, others, ordering);
    Ok(network_forward(net, &obs)?.argmax())
}

/// Draws an index from a categorical distribution by inverse CDF.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// A state-value estimate over ego observations.
pub trait ValueFunction {
    fn value(&self, obs: &Observation) -> Result<f64>;
}

impl ValueFunction for NetworkParams {
    fn value(&self, obs: &Observation) -> Result<f64> {
        Ok(network_forward(self, obs)?.value)
    }
}

impl<F: Fn(&Observation) -> f64> ValueFunction for F {
    fn value(&self, obs: &Observation) -> Result<f64> {
        Ok(self(obs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookaheadConfig {
    /// Propagation horizon in seconds.
    pub horizon: f64,
    pub gamma: f64,
    pub reward: RewardConfig,
    pub ordering: OrderingStrategy,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        LookaheadConfig {
            horizon: 1.0,
            gamma: 0.97,
            reward: RewardConfig::default(),
            ordering: OrderingStrategy::ClosestLast,
        }
    }
}

/// Per-action breakdown of a lookahead evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LookaheadScores {
    /// Collision or near-miss penalty of the propagated joint state.
    pub penalty: Vec<f64>,
    /// Discounted value of the propagated state.
    pub discounted_value: Vec<f64>,
    pub total: Vec<f64>,
}

impl LookaheadScores {
    pub fn choice(&self) -> usize {
        argmax(&self.total)
    }

    /// The action a pure value maximiser would take, ignoring penalties.
    pub fn value_choice(&self) -> usize {
        argmax(&self.discounted_value)
    }
}

/// Other agents moved for `horizon` seconds at their current velocity.
pub fn propagate_constant_velocity(others: &[AgentState], horizon: f64) -> Vec<AgentState> {
    others
        .iter()
        .map(|o| AgentState {
            px: o.px + horizon * o.vx,
            py: o.py + horizon * o.vy,
            ..*o
        })
        .collect()
}

/// Scores every action by one-step constant-velocity lookahead.
pub fn cadrl_scores<V: ValueFunction + ?Sized>(
    agent: &AgentState,
    others: &[AgentState],
    value: &V,
    space: &ActionSpace,
    cfg: &LookaheadConfig,
) -> Result<LookaheadScores> {
    let moved = propagate_constant_velocity(others, cfg.horizon);
    let discount = cfg.gamma.powf(cfg.horizon * agent.v_pref);
    let n = space.len();
    let mut out = LookaheadScores {
        penalty: Vec::with_capacity(n),
        discounted_value: Vec::with_capacity(n),
        total: Vec::with_capacity(n),
    };
    for action in space.iter() {
        let me = kinematic_step(agent, action, cfg.horizon);
        let (penalty, _) = reward_value(d_min(&me, &moved), false, &cfg.reward);
        let v = discount * value.value(&Observation::observe(&me, &moved, cfg.ordering))?;
        out.penalty.push(penalty);
        out.discounted_value.push(v);
        out.total.push(penalty + v);
    }
    Ok(out)
}

/// Action maximising penalty plus discounted value after the lookahead.
pub fn cadrl_lookahead<V: ValueFunction + ?Sized>(
    agent: &AgentState,
    others: &[AgentState],
    value: &V,
    space: &ActionSpace,
    cfg: &LookaheadConfig,
) -> Result<usize> {
    Ok(cadrl_scores(agent, others, value, space, cfg)?.choice())
}

/// Shared inputs for dispatching on a [`PolicyTag`].
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub net: Option<&'a NetworkParams>,
    pub ordering: OrderingStrategy,
    pub lookahead: LookaheadConfig,
}

impl<'a> PolicyContext<'a> {
    pub fn new(net: Option<&'a NetworkParams>) -> Self {
        PolicyContext {
            net,
            ordering: OrderingStrategy::ClosestLast,
            lookahead: LookaheadConfig {
                gamma: net.map_or(0.97, |n| n.meta.gamma),
                ..LookaheadConfig::default()
            },
        }
    }

    fn network(&self, tag: PolicyTag) -> Result<&'a NetworkParams> {
        self.net
            .ok_or_else(|| Error::Configuration(format!("policy {tag} requires a checkpoint")))
    }
}

/// Deterministic action for an active agent under `tag`.
pub fn select_action(
    tag: PolicyTag,
    agent: &AgentState,
    others: &[AgentState],
    space: &ActionSpace,
    ctx: &PolicyContext<'_>,
) -> Result<usize> {
    match tag {
        PolicyTag::NonCooperative => Ok(non_cooperative(agent, space)),
        PolicyTag::ZeroVelocity => Ok(zero_velocity(space)),
        PolicyTag::Ga3c => ga3c_inference(agent, others, ctx.network(tag)?, space, ctx.ordering),
        PolicyTag::Cadrl => {
            let net = ctx.network(tag)?;
            check_head(net, space)?;
            cadrl_lookahead(agent, others, net, space, &ctx.lookahead)
        }
    }
}
