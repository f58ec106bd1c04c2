//! Simulator of a multi-UAV wireless-powered communication network with
//! type-switching ground nodes, and a two-tier SAC/DQN training harness.
//!
//! The physics and neural kernels are generic over [`Scalar`] (`f32` or
//! `f64`); the environment, agents and trainer run in `f64`.

pub mod channel;
pub mod config;
pub mod dqn;
pub mod energy;
pub mod environment;
pub mod error;
pub mod neural;
pub mod node_rules;
pub mod orchestrator;
pub mod sac;
pub mod scalar;
pub mod state;
pub mod toys;

pub use config::{validate_config, WorldConfig};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use state::{NodeType, SubSlotSchedule, UavState, WnState};

pub type Mlp64 = neural::Mlp<f64>;
pub type Mlp32 = neural::Mlp<f32>;
pub type GainMatrix64 = channel::GainMatrix<f64>;
