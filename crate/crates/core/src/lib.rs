//! Decentralized multiagent collision avoidance with an LSTM actor-critic.
//!
//! The crate covers the simulator ([`env`]), agent geometry ([`agent`]),
//! the network with hand-written gradients ([`network`]), scripted and
//! learned policies ([`policies`]), training ([`training`]), gate analysis
//! ([`analysis`]) and batch evaluation ([`harness`]).

pub mod agent;
pub mod analysis;
pub mod env;
pub mod error;
pub mod harness;
pub mod network;
pub mod policies;
pub mod training;

pub use agent::{
    build_action_space, kinematic_step, to_ego_frame, Action, ActionSet, ActionSpace, AgentState,
    AgentStatus, EgoNeighborState, EgoSelfState,
};
pub use env::{
    random_test_case, reward, step_env, AgentSpec, EpisodeLog, RewardConfig, ScenarioSpec,
    SimConfig, Simulator,
};
pub use error::{CheckpointError, Error, Result};
pub use network::{NetworkConfig, NetworkParams, Observation, OrderingStrategy};
pub use policies::PolicyTag;
