use std::collections::BTreeMap;

use crate::env::{ScenarioSpec, SimConfig, Simulator, StepRecord};
use crate::error::{Error, Result};

/// Re-steps `spec` with the action indices stored in `records` and returns
/// the largest position deviation from the logged positions.
pub fn replay_deviation(
    spec: &ScenarioSpec,
    sim: &SimConfig,
    records: &[StepRecord],
) -> Result<f64> {
    let n = spec.agents.len();
    let mut steps: BTreeMap<u64, Vec<&StepRecord>> = BTreeMap::new();
    for r in records {
        if r.agent_id >= n {
            return Err(Error::InvalidArgument(format!(
                "record for unknown agent {}",
                r.agent_id
            )));
        }
        steps.entry(r.t.to_bits()).or_default().push(r);
    }
    let mut grouped: Vec<(f64, Vec<&StepRecord>)> = steps
        .into_iter()
        .map(|(k, v)| (f64::from_bits(k), v))
        .collect();
    grouped.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut simulator = Simulator::new(spec, *sim)?;
    let mut worst: f64 = 0.0;
    for (t, rows) in grouped {
        if rows.len() != n {
            return Err(Error::InvalidArgument(format!(
                "time {t}: {} rows for {n} agents",
                rows.len()
            )));
        }
        let mut actions = vec![None; n];
        for r in &rows {
            actions[r.agent_id] = usize::try_from(r.action_idx).ok();
        }
        simulator.step(&actions)?;
        for r in rows {
            let s = simulator.states()[r.agent_id];
            worst = worst.max((s.px - r.px).abs()).max((s.py - r.py).abs());
        }
    }
    Ok(worst)
}
