//! Two-agent multi-objective DQN contention-window control.
//!
//! A gNB agent sets the PC3 contention window and an AP agent sets the Wi-Fi
//! one, once per interaction period. Both see the same state and receive the
//! same scalarized reward `α(1 − D_pc1) + (1 − α)·JFI`.

pub mod adam;
pub mod agent;
pub mod checkpoint;
pub mod mlp;
pub mod replay;
pub mod train;

pub use adam::Adam;
pub use agent::{
    argmax, build_state, cw_from_action, epsilon, reward, td_target, AgentRole, DqnAgent, DqnParams,
    DqnState, N_ACTIONS,
};
pub use checkpoint::{CheckpointEntry, CheckpointError};
pub use mlp::{Mlp, Sample};
pub use replay::{Experience, ReplayBuffer, STATE_DIM};
pub use train::{run_greedy, train, CurvePoint, InteractionSettings};
