//! Reinforcement learning with confidence-gated reward requests.
//!
//! An agent only asks the environment for a reward when its confidence,
//! derived from the entropy of its action distribution and of a learned
//! Gaussian reward model, drops below a threshold. Skipped rewards are
//! imputed from the reward model when the agent trains.

pub mod agents;
pub mod buffers;
pub mod confidence;
pub mod envs;
pub mod nn;
pub mod reward_model;
pub mod trainer;
