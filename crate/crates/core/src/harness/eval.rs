use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    episode_metrics, random_test_case, AgentOutcome, EpisodeLog, ScenarioSpec, SimConfig, Simulator,
};
use crate::error::{Error, Result};
use crate::policies::{select_action, PolicyContext, PolicyTag};

/// Runs `spec` with each agent following its own policy tag until every
/// agent has reached its goal, collided or timed out.
pub fn run_episode(
    spec: &ScenarioSpec,
    sim: &SimConfig,
    ctx: &PolicyContext<'_>,
) -> Result<EpisodeLog> {
    let mut simulator = Simulator::new(spec, *sim)?;
    let n = spec.agents.len();
    while !simulator.is_done() {
        let mut actions = vec![None; n];
        for (i, slot) in actions.iter_mut().enumerate() {
            let me = simulator.states()[i];
            if me.status.is_active() {
                let others = simulator.others(i);
                let space = simulator.action_space(i);
                *slot = Some(select_action(
                    spec.agents[i].policy,
                    &me,
                    &others,
                    space,
                    ctx,
                )?);
            }
        }
        simulator.step(&actions)?;
    }
    Ok(simulator.into_log())
}

/// Outcome of one whole test case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseOutcome {
    Collision,
    Stuck,
    Success,
}

/// A collision anywhere marks the case as a collision; otherwise any agent
/// that did not arrive marks it stuck.
pub fn case_outcome(agents: &[AgentOutcome]) -> CaseOutcome {
    if agents.iter().any(|a| matches!(a, AgentOutcome::Collision)) {
        CaseOutcome::Collision
    } else if agents.iter().any(|a| matches!(a, AgentOutcome::Stuck)) {
        CaseOutcome::Stuck
    } else {
        CaseOutcome::Success
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtraTime {
    pub mean: Option<f64>,
    pub p75: Option<f64>,
    pub p90: Option<f64>,
}

/// Aggregate metrics over a case set. Extra-time statistics are taken per
/// agent over the agents of successful cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub n_agents: usize,
    pub n_cases: usize,
    pub seed: u64,
    pub pct_collision: f64,
    pub pct_stuck: f64,
    pub pct_success: f64,
    pub extra_time: ExtraTime,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    match sorted.len() {
        0 => None,
        1 => Some(sorted[0]),
        n => {
            let pos = q / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
        }
    }
}

/// Seed of test case `index` in the case set identified by `seed`.
pub fn case_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// The random case set shared by every policy evaluated with `seed`.
pub fn test_cases(n_agents: usize, n_cases: usize, seed: u64) -> Result<Vec<ScenarioSpec>> {
    (0..n_cases as u64)
        .map(|i| random_test_case(n_agents, case_seed(seed, i)))
        .collect()
}

/// Evaluates explicit cases, each agent using the policy stored in the case.
pub fn evaluate_cases(
    label: &str,
    cases: &[ScenarioSpec],
    sim: &SimConfig,
    ctx: &PolicyContext<'_>,
    seed: u64,
) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no test cases".into()));
    }
    let results: Vec<Vec<AgentOutcome>> = cases
        .par_iter()
        .map(|spec| run_episode(spec, sim, ctx).map(|log| episode_metrics(&log, spec)))
        .collect::<Result<_>>()?;

    let mut counts = [0usize; 3];
    let mut extra = Vec::new();
    for agents in &results {
        let outcome = case_outcome(agents);
        counts[outcome as usize] += 1;
        if outcome == CaseOutcome::Success {
            extra.extend(agents.iter().filter_map(|a| match a {
                AgentOutcome::Success { extra_time } => Some(*extra_time),
                _ => None,
            }));
        }
    }
    extra.sort_by(f64::total_cmp);
    let n = cases.len() as f64;
    let pct = |c: usize| 100.0 * c as f64 / n;
    let mean = (!extra.is_empty()).then(|| extra.iter().sum::<f64>() / extra.len() as f64);
    Ok(EvalReport {
        policy: label.to_string(),
        n_agents: cases.iter().map(|c| c.agents.len()).max().unwrap_or(0),
        n_cases: cases.len(),
        seed,
        pct_collision: pct(counts[CaseOutcome::Collision as usize]),
        pct_stuck: pct(counts[CaseOutcome::Stuck as usize]),
        pct_success: pct(counts[CaseOutcome::Success as usize]),
        extra_time: ExtraTime {
            mean,
            p75: percentile(&extra, 75.0),
            p90: percentile(&extra, 90.0),
        },
    })
}

/// Evaluates `policy` for every agent on `n_cases` random `n_agents` cases.
/// Learned policies require `ctx.net` with a head matching the action set.
pub fn evaluate(
    policy: PolicyTag,
    n_agents: usize,
    n_cases: usize,
    sim: &SimConfig,
    ctx: &PolicyContext<'_>,
    seed: u64,
) -> Result<EvalReport> {
    if policy.is_learned() {
        let net = ctx.net.ok_or_else(|| {
            Error::Configuration(format!("policy {policy} requires a checkpoint"))
        })?;
        if net.num_actions() != sim.action_set.len() {
            return Err(Error::Configuration(format!(
                "checkpoint has {} actions but the simulator uses {}",
                net.num_actions(),
                sim.action_set.len()
            )));
        }
    }
    let cases: Vec<ScenarioSpec> = test_cases(n_agents, n_cases, seed)?
        .into_iter()
        .map(|c| c.with_policy(policy))
        .collect();
    evaluate_cases(policy.as_str(), &cases, sim, ctx, seed)
}

/// Evaluates several policies on the identical case set.
pub fn compare(
    policies: &[PolicyTag],
    n_agents: usize,
    n_cases: usize,
    sim: &SimConfig,
    ctx: &PolicyContext<'_>,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    policies
        .iter()
        .map(|&p| evaluate(p, n_agents, n_cases, sim, ctx, seed))
        .collect()
}
