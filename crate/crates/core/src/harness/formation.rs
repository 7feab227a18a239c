use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentSpec, EpisodeLog, ScenarioSpec, SimConfig};
use crate::error::{Error, Result};
use crate::policies::{PolicyContext, PolicyTag};

use super::eval::run_episode;

/// A sequence of goal sets, one per formation, for a fixed group of agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationTask {
    pub formations: Vec<Vec<(f64, f64)>>,
    pub radius: f64,
    pub v_pref: f64,
    /// Initial positions; random non-overlapping positions around the goals
    /// when absent.
    pub starts: Option<Vec<(f64, f64)>>,
}

impl FormationTask {
    pub fn new(formations: Vec<Vec<(f64, f64)>>) -> Self {
        FormationTask {
            formations,
            radius: 0.25,
            v_pref: 1.0,
            starts: None,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.formations.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_agents();
        if n == 0 {
            return Err(Error::InvalidArgument("formation task has no goals".into()));
        }
        if let Some(k) = self.formations.iter().position(|f| f.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "formation {k} has {} goals, expected {n}",
                self.formations[k].len()
            )));
        }
        if self.starts.as_ref().is_some_and(|s| s.len() != n) {
            return Err(Error::InvalidArgument(
                "start count differs from goal count".into(),
            ));
        }
        if !(self.radius > 0.0) || !(self.v_pref > 0.0) {
            return Err(Error::InvalidArgument(
                "radius and v_pref must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Reads a goals file: a JSON list of formations, each a list of `[x, y]`.
pub fn load_goals(path: &Path) -> Result<Vec<Vec<(f64, f64)>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<Vec<[f64; 2]>> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    Ok(raw
        .into_iter()
        .map(|f| f.into_iter().map(|[x, y]| (x, y)).collect())
        .collect())
}

pub fn save_goals(path: &Path, formations: &[Vec<(f64, f64)>]) -> Result<()> {
    let raw: Vec<Vec<[f64; 2]>> = formations
        .iter()
        .map(|f| f.iter().map(|&(x, y)| [x, y]).collect())
        .collect();
    let text = serde_json::to_string(&raw).expect("goals serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormationRun {
    /// `assignment[i]` is the goal index given to agent `i`.
    pub assignment: Vec<usize>,
    pub scenario: ScenarioSpec,
    pub log: EpisodeLog,
    /// Whether every agent reached its goal.
    pub completed: bool,
}

fn random_starts<R: Rng>(task: &FormationTask, rng: &mut R) -> Result<Vec<(f64, f64)>> {
    let all = task.formations.iter().flatten();
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    let margin = 1.0 + task.radius;
    let mut starts: Vec<(f64, f64)> = Vec::new();
    for _ in 0..10_000 {
        if starts.len() == task.n_agents() {
            return Ok(starts);
        }
        let p = (
            rng.gen_range(lo_x - margin..=hi_x + margin),
            rng.gen_range(lo_y - margin..=hi_y + margin),
        );
        if starts
            .iter()
            .all(|q| (p.0 - q.0).hypot(p.1 - q.1) > 2.0 * task.radius + 0.1)
        {
            starts.push(p);
        }
    }
    Err(Error::ScenarioGeneration { attempts: 10_000 })
}

/// Runs the formations in order. Goals are assigned to agents by a random
/// permutation drawn from `seed`, and each run starts where the previous
/// one ended. Runs that time out are kept and the sequence continues.
pub fn run_formation(
    task: &FormationTask,
    policy: PolicyTag,
    sim: &SimConfig,
    ctx: &PolicyContext<'_>,
    seed: u64,
) -> Result<Vec<FormationRun>> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = match &task.starts {
        Some(s) => s.clone(),
        None => random_starts(task, &mut rng)?,
    };
    let n = task.n_agents();
    let mut runs = Vec::with_capacity(task.formations.len());
    for goals in &task.formations {
        let mut assignment: Vec<usize> = (0..n).collect();
        assignment.shuffle(&mut rng);
        let scenario = ScenarioSpec {
            domain_side_m: 0.0,
            seed,
            agents: (0..n)
                .map(|i| AgentSpec {
                    px: positions[i].0,
                    py: positions[i].1,
                    gx: goals[assignment[i]].0,
                    gy: goals[assignment[i]].1,
                    radius: task.radius,
                    v_pref: task.v_pref,
                    policy,
                })
                .collect(),
        };
        let log = run_episode(&scenario, sim, ctx)?;
        let completed = log
            .terminal
            .iter()
            .all(|s| *s == crate::agent::AgentStatus::AtGoal);
        let last = &log.records[log.records.len() - n..];
        positions = last.iter().map(|r| (r.px, r.py)).collect();
        runs.push(FormationRun {
            assignment,
            scenario,
            log,
            completed,
        });
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_agent_two_formations() {
        let mut task = FormationTask::new(vec![vec![(2.0, 0.0)], vec![(2.0, 3.0)]]);
        task.starts = Some(vec![(-2.0, 0.0)]);
        let sim = SimConfig::default();
        let runs = run_formation(
            &task,
            PolicyTag::NonCooperative,
            &sim,
            &PolicyContext::new(None),
            1,
        )
        .unwrap();
        assert_eq!(runs.len(), 2);
        assert!(runs.iter().all(|r| r.completed));
        let end = runs[0].log.records.last().unwrap();
        assert_eq!(
            (runs[1].scenario.agents[0].px, runs[1].scenario.agents[0].py),
            (end.px, end.py)
        );
    }

    #[test]
    fn same_seed_same_assignment() {
        let goals: Vec<(f64, f64)> = (0..6).map(|k| (k as f64 - 2.5, 2.0)).collect();
        let task = FormationTask::new(vec![
            goals.clone(),
            goals.iter().map(|&(x, y)| (x, -y)).collect(),
        ]);
        let sim = SimConfig {
            timeout: 15.0,
            ..SimConfig::default()
        };
        let ctx = PolicyContext::new(None);
        let a = run_formation(&task, PolicyTag::NonCooperative, &sim, &ctx, 4).unwrap();
        let b = run_formation(&task, PolicyTag::NonCooperative, &sim, &ctx, 4).unwrap();
        assert_eq!(a, b);
        let mut sorted = a[0].assignment.clone();
        sorted.sort();
        assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let task = FormationTask::new(vec![vec![(0.0, 0.0), (1.0, 1.0)], vec![(0.0, 0.0)]]);
        assert!(task.validate().is_err());
    }

    #[test]
    fn goals_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("goals.json");
        let goals = vec![
            vec![(0.5, -1.0), (2.0, 3.0)],
            vec![(1.0, 1.0), (-1.0, -1.0)],
        ];
        save_goals(&path, &goals).unwrap();
        assert_eq!(load_goals(&path).unwrap(), goals);
        fs::write(&path, "[[1, 2]]").unwrap();
        assert!(matches!(load_goals(&path), Err(Error::Format { .. })));
    }
}
