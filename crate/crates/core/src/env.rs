//! Episode simulation: scenario generation, simultaneous stepping, reward
//! evaluation, termination and per-episode statistics.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{kinematic_step, Action, ActionSet, ActionSpace, AgentState, AgentStatus};
use crate::error::{Error, Result};
use crate::policies::PolicyTag;

pub const RADIUS_RANGE: (f64, f64) = (0.2, 0.8);
pub const V_PREF_RANGE: (f64, f64) = (0.5, 2.0);
pub const MIN_START_GOAL_DIST: f64 = 2.0;
pub const MAX_GENERATION_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub px: f64,
    pub py: f64,
    pub gx: f64,
    pub gy: f64,
    pub radius: f64,
    pub v_pref: f64,
    pub policy: PolicyTag,
}

impl AgentSpec {
    pub fn start(&self) -> (f64, f64) {
        (self.px, self.py)
    }

    pub fn goal(&self) -> (f64, f64) {
        (self.gx, self.gy)
    }

    pub fn straight_line_time(&self) -> f64 {
        (self.gx - self.px).hypot(self.gy - self.py) / self.v_pref
    }

    pub fn initial_state(&self) -> AgentState {
        AgentState::new(self.start(), self.goal(), self.radius, self.v_pref)
    }
}

/// A test case: agents with start, goal, size, speed and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub domain_side_m: f64,
    pub seed: u64,
    pub agents: Vec<AgentSpec>,
}

impl ScenarioSpec {
    pub fn with_policy(mut self, policy: PolicyTag) -> Self {
        for a in &mut self.agents {
            a.policy = policy;
        }
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| Error::io(path, e))?;
        let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        spec.validate().map_err(|e| Error::format(path, e))?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("scenario serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Checks radii, speeds and start overlap.
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::InvalidArgument("scenario has no agents".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if !(a.radius > 0.0) || !(a.v_pref > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "agent {i}: radius and v_pref must be positive"
                )));
            }
            for b in &self.agents[..i] {
                if (a.px - b.px).hypot(a.py - b.py) <= a.radius + b.radius {
                    return Err(Error::InvalidArgument(format!(
                        "agent {i}: start overlaps another agent"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Square domain side used by the generator: 8 m below ten agents, 12 m otherwise.
pub fn domain_side_for(n_agents: usize) -> f64 {
    if n_agents < 10 {
        8.0
    } else {
        12.0
    }
}

/// Random scenario with uniform starts and goals, radii in [0.2, 0.8] m and
/// preferred speeds in [0.5, 2.0] m/s. Starts are pairwise non-overlapping,
/// as are goals, and every start is at least 2 m from its goal.
pub fn random_test_case(n_agents: usize, seed: u64) -> Result<ScenarioSpec> {
    if n_agents < 1 {
        return Err(Error::InvalidArgument("need at least one agent".into()));
    }
    let side = domain_side_for(n_agents);
    let half = side / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents: Vec<AgentSpec> = Vec::with_capacity(n_agents);
    let mut attempts = 0;
    while agents.len() < n_agents {
        attempts += 1;
        if attempts > MAX_GENERATION_ATTEMPTS {
            return Err(Error::ScenarioGeneration {
                attempts: attempts - 1,
            });
        }
        let radius = rng.gen_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
        let v_pref = rng.gen_range(V_PREF_RANGE.0..=V_PREF_RANGE.1);
        let px = rng.gen_range(-half..=half);
        let py = rng.gen_range(-half..=half);
        let gx = rng.gen_range(-half..=half);
        let gy = rng.gen_range(-half..=half);
        if (gx - px).hypot(gy - py) < MIN_START_GOAL_DIST {
            continue;
        }
        let clear = agents.iter().all(|b| {
            (px - b.px).hypot(py - b.py) > radius + b.radius
                && (gx - b.gx).hypot(gy - b.gy) > radius + b.radius
        });
        if !clear {
            continue;
        }
        agents.push(AgentSpec {
            px,
            py,
            gx,
            gy,
            radius,
            v_pref,
            policy: PolicyTag::Ga3c,
        });
    }
    Ok(ScenarioSpec {
        domain_side_m: side,
        seed,
        agents,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub goal: f64,
    pub collision: f64,
    pub near_miss_base: f64,
    pub near_miss_margin: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            goal: 1.0,
            collision: -0.25,
            near_miss_base: -0.1,
            near_miss_margin: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub timeout: f64,
    /// Distance to goal that counts as arrival; `None` uses the agent radius.
    pub goal_tolerance: Option<f64>,
    pub reward: RewardConfig,
    pub gamma: f64,
    pub action_set: ActionSet,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.2,
            timeout: 60.0,
            goal_tolerance: None,
            reward: RewardConfig::default(),
            gamma: 0.97,
            action_set: ActionSet::Eleven,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.timeout > self.dt) {
            return Err(Error::InvalidArgument(
                "need dt > 0 and timeout > dt".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument("gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of steps after which the episode is cut off.
    pub fn max_steps(&self) -> usize {
        (self.timeout / self.dt - 1e-9).ceil() as usize
    }

    pub fn tolerance_for(&self, agent: &AgentState) -> f64 {
        self.goal_tolerance.unwrap_or(agent.radius)
    }
}

/// Surface distance to the nearest other agent; `+inf` with no others.
pub fn d_min(agent: &AgentState, others: &[AgentState]) -> f64 {
    others
        .iter()
        .map(|o| agent.center_distance(o) - agent.radius - o.radius)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardEvent {
    Collision,
    Goal,
    NearMiss,
    Nothing,
}

/// Reward for a surface distance `d_min` and an arrival flag. Collision beats
/// goal beats near-miss.
pub fn reward_value(d_min: f64, at_goal: bool, cfg: &RewardConfig) -> (f64, RewardEvent) {
    if d_min < 0.0 {
        (cfg.collision, RewardEvent::Collision)
    } else if at_goal {
        (cfg.goal, RewardEvent::Goal)
    } else if d_min > 0.0 && d_min < cfg.near_miss_margin {
        (cfg.near_miss_base + d_min / 2.0, RewardEvent::NearMiss)
    } else {
        (0.0, RewardEvent::Nothing)
    }
}

pub fn reward_event(
    agent: &AgentState,
    others: &[AgentState],
    goal_tolerance: f64,
    cfg: &RewardConfig,
) -> (f64, RewardEvent) {
    reward_value(
        d_min(agent, others),
        agent.dist_to_goal() <= goal_tolerance,
        cfg,
    )
}

pub fn reward(agent: &AgentState, others: &[AgentState], config: &SimConfig) -> f64 {
    reward_event(agent, others, config.tolerance_for(agent), &config.reward).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub states: Vec<AgentState>,
    /// `None` for agents that were already inactive before the step.
    pub rewards: Vec<Option<f64>>,
    pub statuses: Vec<AgentStatus>,
}

/// Advances every active agent from the same pre-step snapshot, then scores
/// them on the post-step joint state. `step_index` is the zero-based index of
/// the step being taken, used for the timeout.
pub fn step_env(
    states: &[AgentState],
    actions: &[Option<Action>],
    config: &SimConfig,
    step_index: usize,
) -> Result<StepResult> {
    if actions.len() != states.len() {
        return Err(Error::InvalidArgument(format!(
            "{} actions for {} agents",
            actions.len(),
            states.len()
        )));
    }
    let mut next = Vec::with_capacity(states.len());
    for (i, (s, a)) in states.iter().zip(actions).enumerate() {
        match (s.status.is_active(), a) {
            (true, Some(a)) => next.push(kinematic_step(s, *a, config.dt)),
            (false, None) => next.push(*s),
            (true, None) => {
                return Err(Error::InvalidArgument(format!(
                    "active agent {i} has no action"
                )))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidArgument(format!(
                    "inactive agent {i} was given an action"
                )))
            }
        }
    }

    let timed_out = step_index + 1 >= config.max_steps();
    let mut rewards = vec![None; states.len()];
    let mut others = Vec::with_capacity(states.len().saturating_sub(1));
    for i in 0..next.len() {
        if !states[i].status.is_active() {
            continue;
        }
        others.clear();
        others.extend(
            next.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| *s),
        );
        let (r, event) = reward_event(
            &next[i],
            &others,
            config.tolerance_for(&next[i]),
            &config.reward,
        );
        rewards[i] = Some(r);
        next[i].status = match event {
            RewardEvent::Collision => AgentStatus::Collided,
            RewardEvent::Goal => AgentStatus::AtGoal,
            _ if timed_out => AgentStatus::TimedOut,
            _ => AgentStatus::Active,
        };
    }
    for s in next.iter_mut().filter(|s| !s.status.is_active()) {
        s.vx = 0.0;
        s.vy = 0.0;
    }
    let statuses = next.iter().map(|s| s.status).collect();
    Ok(StepResult {
        states: next,
        rewards,
        statuses,
    })
}

/// One row of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub agent_id: usize,
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    pub heading: f64,
    /// -1 when the agent was already inactive.
    pub action_idx: i64,
    pub reward: f64,
    pub status: AgentStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeLog {
    pub records: Vec<StepRecord>,
    pub terminal: Vec<AgentStatus>,
    pub time_to_goal: Vec<Option<f64>>,
    pub steps: usize,
}

const CSV_HEADER: [&str; 10] = [
    "t",
    "agent_id",
    "px",
    "py",
    "vx",
    "vy",
    "heading",
    "action_idx",
    "reward",
    "status",
];

impl EpisodeLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        let wrap = |e: csv::Error| Error::format("<trajectory>", e);
        w.write_record(CSV_HEADER).map_err(wrap)?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.agent_id.to_string(),
                r.px.to_string(),
                r.py.to_string(),
                r.vx.to_string(),
                r.vy.to_string(),
                r.heading.to_string(),
                r.action_idx.to_string(),
                r.reward.to_string(),
                r.status.as_str().to_string(),
            ])
            .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory>", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Parses the rows of a trajectory CSV.
    pub fn read_records<R: Read>(input: R) -> Result<Vec<StepRecord>> {
        let mut rdr = csv::Reader::from_reader(input);
        let bad = |m: String| Error::format("<trajectory>", m);
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut out = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let f = |i: usize| -> Result<f64> {
                row[i]
                    .parse::<f64>()
                    .map_err(|e| bad(format!("column {i}: {e}")))
            };
            out.push(StepRecord {
                t: f(0)?,
                agent_id: row[1].parse().map_err(|e| bad(format!("agent_id: {e}")))?,
                px: f(2)?,
                py: f(3)?,
                vx: f(4)?,
                vy: f(5)?,
                heading: f(6)?,
                action_idx: row[7]
                    .parse()
                    .map_err(|e| bad(format!("action_idx: {e}")))?,
                reward: f(8)?,
                status: AgentStatus::parse(&row[9])
                    .ok_or_else(|| bad(format!("status {}", &row[9])))?,
            });
        }
        Ok(out)
    }
}

/// Stateful wrapper around [`step_env`] that keeps time and the log.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    states: Vec<AgentState>,
    spaces: Vec<ActionSpace>,
    step: usize,
    log: EpisodeLog,
}

impl Simulator {
    pub fn new(spec: &ScenarioSpec, config: SimConfig) -> Result<Self> {
        config.validate()?;
        let states: Vec<AgentState> = spec.agents.iter().map(AgentSpec::initial_state).collect();
        Self::from_states(states, config)
    }

    pub fn from_states(states: Vec<AgentState>, config: SimConfig) -> Result<Self> {
        config.validate()?;
        let spaces = states
            .iter()
            .map(|s| ActionSpace::with_set(s.v_pref, config.action_set))
            .collect::<Result<Vec<_>>>()?;
        let n = states.len();
        Ok(Simulator {
            config,
            states,
            spaces,
            step: 0,
            log: EpisodeLog {
                terminal: vec![AgentStatus::Active; n],
                time_to_goal: vec![None; n],
                ..EpisodeLog::default()
            },
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn action_space(&self, agent: usize) -> &ActionSpace {
        &self.spaces[agent]
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.dt
    }

    pub fn is_done(&self) -> bool {
        self.states.iter().all(|s| !s.status.is_active())
    }

    /// All agents except `agent`, in index order.
    pub fn others(&self, agent: usize) -> Vec<AgentState> {
        self.states
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != agent)
            .map(|(_, s)| *s)
            .collect()
    }

    /// Steps with one action index per active agent (`None` for inactive).
    pub fn step(&mut self, action_indices: &[Option<usize>]) -> Result<Vec<Option<f64>>> {
        if action_indices.len() != self.states.len() {
            return Err(Error::InvalidArgument(format!(
                "{} actions for {} agents",
                action_indices.len(),
                self.states.len()
            )));
        }
        let actions = action_indices
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                None => Ok(None),
                Some(k) => self.spaces[i].get(*k).map(Some).ok_or_else(|| {
                    Error::InvalidArgument(format!("action index {k} out of range"))
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        let result = step_env(&self.states, &actions, &self.config, self.step)?;
        self.step += 1;
        let t = self.step as f64 * self.config.dt;
        for (i, s) in result.states.iter().enumerate() {
            if self.states[i].status.is_active() && !s.status.is_active() {
                self.log.terminal[i] = s.status;
                if s.status == AgentStatus::AtGoal {
                    self.log.time_to_goal[i] = Some(t);
                }
            }
            self.log.records.push(StepRecord {
                t,
                agent_id: i,
                px: s.px,
                py: s.py,
                vx: s.vx,
                vy: s.vy,
                heading: s.heading,
                action_idx: action_indices[i].map_or(-1, |k| k as i64),
                reward: result.rewards[i].unwrap_or(0.0),
                status: s.status,
            });
        }
        self.log.steps = self.step;
        self.states = result.states;
        Ok(result.rewards)
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentOutcome {
    Success { extra_time: f64 },
    Collision,
    Stuck,
}

/// Per-agent outcome and extra time to goal beyond the straight-line time at v_pref.
pub fn episode_metrics(log: &EpisodeLog, spec: &ScenarioSpec) -> Vec<AgentOutcome> {
    spec.agents
        .iter()
        .enumerate()
        .map(|(i, a)| match log.terminal.get(i) {
            Some(AgentStatus::AtGoal) => {
                let t_g = log.time_to_goal[i].expect("at_goal agents record arrival time");
                AgentOutcome::Success {
                    extra_time: t_g - a.straight_line_time(),
                }
            }
            Some(AgentStatus::Collided) => AgentOutcome::Collision,
            _ => AgentOutcome::Stuck,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(x: f64, y: f64, r: f64) -> AgentState {
        AgentState::new((x, y), (x + 10.0, y), r, 1.0)
    }

    #[test]
    fn d_min_examples() {
        let me = agent(0.0, 0.0, 0.3);
        assert!((d_min(&me, &[agent(1.0, 0.0, 0.3)]) - 0.4).abs() < 1e-12);
        assert!((d_min(&me, &[agent(0.5, 0.0, 0.3)]) + 0.1).abs() < 1e-12);
        let far = agent(1.6, 0.0, 0.3); // surface 1.0
        let near = agent(0.0, 1.3, 0.3); // surface 0.7
        assert!((d_min(&me, &[far, near]) - 0.7).abs() < 1e-12);
        assert_eq!(d_min(&me, &[]), f64::INFINITY);
    }

    #[test]
    fn reward_cases() {
        let cfg = SimConfig::default();
        let me = agent(0.0, 0.0, 0.5);
        // d_min = 0.1 exactly: 0.1 + 0.5 + 0.5
        let near = agent(1.1, 0.0, 0.5);
        assert_eq!(d_min(&me, &[near]), 0.10000000000000009);
        let r = reward(&me, &[near], &cfg);
        assert!((r + 0.05).abs() < 1e-15);
        assert_eq!(reward_value(0.1, false, &cfg.reward).0, -0.05);
        assert_eq!(reward(&me, &[agent(0.99, 0.0, 0.5)], &cfg), -0.25);
        let mut at_goal = me;
        at_goal.gx = 0.0;
        at_goal.gy = 0.0;
        assert_eq!(reward(&at_goal, &[agent(2.0, 0.0, 0.5)], &cfg), 1.0);
        assert_eq!(reward(&me, &[agent(3.0, 0.0, 0.5)], &cfg), 0.0);
        // collision dominates goal, goal dominates near-miss
        assert_eq!(reward(&at_goal, &[agent(0.5, 0.0, 0.5)], &cfg), -0.25);
        assert_eq!(reward(&at_goal, &[agent(1.1, 0.0, 0.5)], &cfg), 1.0);
    }

    #[test]
    fn generator_respects_ranges_and_is_deterministic() {
        let a = random_test_case(2, 7).unwrap();
        assert_eq!(a.agents.len(), 2);
        for s in &a.agents {
            assert!((0.2..=0.8).contains(&s.radius));
            assert!((0.5..=2.0).contains(&s.v_pref));
            assert!((s.gx - s.px).hypot(s.gy - s.py) >= MIN_START_GOAL_DIST);
        }
        assert_eq!(a, random_test_case(2, 7).unwrap());
        assert_eq!(a.domain_side_m, 8.0);
        assert_eq!(random_test_case(10, 3).unwrap().domain_side_m, 12.0);
        a.validate().unwrap();
    }

    #[test]
    fn generator_fails_when_domain_is_too_crowded() {
        // 500 agents of radius >= 0.2 cannot fit in a 12 m square without overlap
        // once rejection has burnt through its attempt budget.
        assert!(matches!(
            random_test_case(500, 1),
            Err(Error::ScenarioGeneration { .. })
        ));
    }

    #[test]
    fn head_on_collision() {
        // Centers 1.3 apart with r=0.5 -> gap 0.3; after one step of 0.2 each
        // the centers are 0.9 apart -> gap -0.1.
        let cfg = SimConfig::default();
        let a = AgentState::new((-0.65, 0.0), (5.0, 0.0), 0.5, 1.0);
        let b = AgentState::new((0.65, 0.0), (-5.0, 0.0), 0.5, 1.0);
        let res = step_env(&[a, b], &[Some(Action::new(1.0, 0.0)); 2], &cfg, 0).unwrap();
        assert_eq!(res.statuses, vec![AgentStatus::Collided; 2]);
        assert_eq!(res.rewards, vec![Some(-0.25); 2]);
        assert_eq!(res.states[0].vx, 0.0);
    }

    #[test]
    fn head_on_from_half_metre_gap() {
        // Gap 0.5, each moves 0.2 -> gap 0.1 (near-miss); the second step
        // closes the gap to -0.3.
        let cfg = SimConfig::default();
        let a = AgentState::new((-0.75, 0.0), (5.0, 0.0), 0.5, 1.0);
        let b = AgentState::new((0.75, 0.0), (-5.0, 0.0), 0.5, 1.0);
        let go = [Some(Action::new(1.0, 0.0)); 2];
        let r1 = step_env(&[a, b], &go, &cfg, 0).unwrap();
        assert_eq!(r1.statuses, vec![AgentStatus::Active; 2]);
        let expected = -0.1 + ((1.1f64 - 1.0) / 2.0);
        for r in &r1.rewards {
            assert!((r.unwrap() - expected).abs() < 1e-12);
        }
        let r2 = step_env(&r1.states, &go, &cfg, 1).unwrap();
        assert_eq!(r2.statuses, vec![AgentStatus::Collided; 2]);
    }

    #[test]
    fn arrival_and_timeout() {
        let cfg = SimConfig {
            timeout: 1.0,
            ..SimConfig::default()
        };
        let a = AgentState::new((0.0, 0.0), (0.3, 0.0), 0.2, 1.0);
        let b = AgentState::new((0.0, 5.0), (9.0, 5.0), 0.2, 1.0);
        let res = step_env(&[a, b], &[Some(Action::new(1.0, 0.0)); 2], &cfg, 0).unwrap();
        assert_eq!(res.statuses[0], AgentStatus::AtGoal);
        assert_eq!(res.rewards[0], Some(1.0));
        let last = step_env(&res.states, &[None, Some(Action::new(1.0, 0.0))], &cfg, 4).unwrap();
        assert_eq!(last.statuses[1], AgentStatus::TimedOut);
        assert_eq!(last.rewards[0], None);
        assert_eq!(last.states[0].px, res.states[0].px);
    }

    #[test]
    fn action_mismatch_is_rejected() {
        let cfg = SimConfig::default();
        let a = agent(0.0, 0.0, 0.3);
        assert!(step_env(&[a, a], &[None], &cfg, 0).is_err());
        assert!(step_env(&[a], &[None], &cfg, 0).is_err());
    }

    #[test]
    fn max_steps_rounds_up() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.max_steps(), 300);
        let odd = SimConfig {
            timeout: 1.1,
            ..cfg
        };
        assert_eq!(odd.max_steps(), 6);
    }

    #[test]
    fn metrics_for_detour() {
        // Scripted: 5 m straight-line, arrival logged at 7 s.
        let spec = ScenarioSpec {
            domain_side_m: 8.0,
            seed: 0,
            agents: vec![AgentSpec {
                px: 0.0,
                py: 0.0,
                gx: 5.0,
                gy: 0.0,
                radius: 0.3,
                v_pref: 1.0,
                policy: PolicyTag::NonCooperative,
            }],
        };
        let log = EpisodeLog {
            terminal: vec![AgentStatus::AtGoal],
            time_to_goal: vec![Some(7.0)],
            ..EpisodeLog::default()
        };
        match episode_metrics(&log, &spec)[0] {
            AgentOutcome::Success { extra_time } => assert!((extra_time - 2.0).abs() < 1e-12),
            o => panic!("{o:?}"),
        }
        let collided = EpisodeLog {
            terminal: vec![AgentStatus::Collided],
            time_to_goal: vec![None],
            ..EpisodeLog::default()
        };
        assert_eq!(
            episode_metrics(&collided, &spec)[0],
            AgentOutcome::Collision
        );
    }

    #[test]
    fn csv_round_trip_preserves_floats() {
        let spec = random_test_case(3, 11).unwrap();
        let mut sim = Simulator::new(&spec, SimConfig::default()).unwrap();
        sim.step(&[Some(0), Some(3), Some(7)]).unwrap();
        let mut buf = Vec::new();
        sim.log().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,agent_id,px,py,vx,vy,heading,action_idx,reward,status\n"));
        let rows = EpisodeLog::read_records(buf.as_slice()).unwrap();
        assert_eq!(rows, sim.log().records);
    }
}
