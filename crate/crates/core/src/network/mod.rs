//! LSTM neighbor encoder with a shared actor-critic trunk.

pub mod adam;
pub mod backward;
pub mod checkpoint;
pub mod forward;
pub mod ordering;
pub mod params;

use crate::agent::{NEIGHBOR_DIM, SELF_DIM};

pub use adam::{Adam, AdamConfig};
pub use backward::{
    a3c_loss, a3c_loss_fixed_advantage, advantages, backward, supervised_backward, supervised_loss,
    LabeledSample, LossBreakdown, LossConfig, Sample, SupervisedLoss,
};
pub use checkpoint::{load_checkpoint, load_checkpoint_with, save_checkpoint};
pub use forward::{lstm_encode, lstm_step, network_forward, ForwardTrace, LstmStep, LstmTrace};
pub use ordering::{order_neighbors, time_to_collision, OrderingStrategy};
pub use params::{
    GradientSet, LstmParams, Matrix, MlpParams, NetworkConfig, NetworkMeta, NetworkParams, ParamSet,
};

/// Network input: the ego self state and the already ordered neighbor
/// sequence, both in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub self_state: [f64; SELF_DIM],
    pub neighbors: Vec<[f64; NEIGHBOR_DIM]>,
}
