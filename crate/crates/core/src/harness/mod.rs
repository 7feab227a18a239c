//! Batch evaluation, formation runs and trajectory replay.

pub mod eval;
pub mod formation;
pub mod replay;

pub use eval::{
    case_outcome, compare, evaluate, evaluate_cases, percentile, run_episode, test_cases,
    CaseOutcome, EvalReport, ExtraTime,
};
pub use formation::{load_goals, run_formation, save_goals, FormationRun, FormationTask};
pub use replay::replay_deviation;
