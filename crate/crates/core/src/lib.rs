//! Simulation, reference schedulers and meta reinforcement learning for
//! dependency-aware task offloading in multi-access edge computing.

pub mod baselines;
pub mod dag;
pub mod error;
pub mod meta;
pub mod neural;
pub mod ppo;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod task;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision network parameters.
pub type Params = neural::PolicyParams<f64>;
pub type Trajectory = ppo::Trajectory<f64>;
pub type MetaState = meta::MetaState<f64>;
